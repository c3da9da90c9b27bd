#include "decay_bench/manifest.hpp"

#include <algorithm>
#include <array>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "decay_bench/errors.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::manifest {

namespace {

constexpr std::array<std::string_view, 8> kColumns = {
    "video_id", "path", "label", "technique", "engine", "identity_id", "dataset_version", "split"};

// RFC-4180 style: comma separated, double-quoted fields may contain commas,
// newlines and doubled quotes.
std::vector<std::vector<std::string>> parse_csv_rows(std::string_view text, std::vector<std::size_t>& line_of_row) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t row_line = 1;

    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        const bool blank = row.size() == 1 && row[0].empty();
        if (!blank) {
            rows.push_back(std::move(row));
            line_of_row.push_back(row_line);
        }
        row.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field_started) throw ParseError("line " + std::to_string(line) + ": stray quote inside field");
                quoted = true;
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                break;
            case '\n':
                end_row();
                ++line;
                row_line = line;
                break;
            default:
                field.push_back(c);
                field_started = true;
        }
    }
    if (quoted) throw ParseError("unterminated quoted field starting on line " + std::to_string(row_line));
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

std::filesystem::path resolve_path(const std::string& raw, const std::filesystem::path& base_dir) {
    std::filesystem::path p(raw);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p.lexically_normal();
}

std::string infer_version(const std::vector<VideoRecord>& records) {
    if (records.empty()) return {};
    const std::string& first = records.front().dataset_version;
    for (const auto& r : records) {
        if (r.dataset_version != first) return "mixed";
    }
    return first;
}

std::vector<std::string> sorted_train_identities(const DatasetManifest& manifest) {
    std::set<std::string> ids;
    for (const auto& r : manifest.records()) {
        if (r.split == Split::train) ids.insert(r.identity_id);
    }
    return {ids.begin(), ids.end()};
}

}  // namespace

std::string_view to_string(Label v) { return v == Label::real ? "real" : "fake"; }

std::string_view to_string(Technique v) {
    switch (v) {
        case Technique::real: return "real";
        case Technique::face_swap: return "face_swap";
        case Technique::lip_sync: return "lip_sync";
        case Technique::avatar: return "avatar";
    }
    return "real";
}

std::string_view to_string(Split v) { return v == Split::train ? "train" : "test"; }
std::string_view to_string(ClassScheme v) { return v == ClassScheme::binary ? "binary" : "multiclass"; }

Label parse_label(std::string_view s) {
    if (s == "real") return Label::real;
    if (s == "fake") return Label::fake;
    throw ParseError("invalid label '" + std::string(s) + "' (expected real|fake)");
}

Technique parse_technique(std::string_view s) {
    if (s == "real") return Technique::real;
    if (s == "face_swap") return Technique::face_swap;
    if (s == "lip_sync") return Technique::lip_sync;
    if (s == "avatar") return Technique::avatar;
    throw ParseError("invalid technique '" + std::string(s) + "' (expected real|face_swap|lip_sync|avatar)");
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ParseError("invalid split '" + std::string(s) + "' (expected train|test)");
}

ClassScheme parse_class_scheme(std::string_view s) {
    if (s == "binary") return ClassScheme::binary;
    if (s == "multiclass") return ClassScheme::multiclass;
    throw ParseError("invalid class scheme '" + std::string(s) + "' (expected binary|multiclass)");
}

int num_classes(ClassScheme scheme) { return scheme == ClassScheme::binary ? 2 : 4; }

std::vector<std::string> class_names(ClassScheme scheme) {
    if (scheme == ClassScheme::binary) return {"real", "fake"};
    return {"real", "face_swap", "lip_sync", "avatar"};
}

int VideoRecord::class_id(ClassScheme scheme) const {
    if (scheme == ClassScheme::binary) return label == Label::real ? 0 : 1;
    return static_cast<int>(technique);
}

void validate_record(const VideoRecord& r) {
    const std::string who = "video '" + r.video_id + "'";
    if (r.video_id.empty()) throw IntegrityError("record with empty video_id");
    if (r.identity_id.empty()) throw IntegrityError(who + ": empty identity_id");
    if (r.path.empty()) throw IntegrityError(who + ": empty path");
    const bool real_label = r.label == Label::real;
    const bool real_technique = r.technique == Technique::real;
    const bool no_engine = r.engine == "none";
    if (real_label != real_technique || real_label != no_engine) {
        throw IntegrityError(who + ": label/technique/engine disagree (label=" + std::string(to_string(r.label)) +
                             ", technique=" + std::string(to_string(r.technique)) + ", engine=" + r.engine +
                             "); real videos need technique=real and engine=none");
    }
}

DatasetManifest::DatasetManifest(std::vector<VideoRecord> records, std::string version, ClassScheme scheme)
    : records_(std::move(records)), version_(std::move(version)), scheme_(scheme) {
    std::unordered_set<std::string> ids;
    std::unordered_map<std::string, Split> identity_split;
    for (const auto& r : records_) {
        validate_record(r);
        if (!ids.insert(r.video_id).second) throw IntegrityError("duplicate video_id '" + r.video_id + "'");
        auto [it, inserted] = identity_split.emplace(r.identity_id, r.split);
        if (!inserted && it->second != r.split) {
            throw IntegrityError("identity '" + r.identity_id + "' appears in both train and test (video '" +
                                 r.video_id + "')");
        }
    }
}

IdentitySet DatasetManifest::identities() const {
    IdentitySet ids;
    for (const auto& r : records_) ids.insert(r.identity_id);
    return ids;
}

DatasetManifest DatasetManifest::partition(Split split) const {
    std::vector<VideoRecord> out;
    for (const auto& r : records_) {
        if (r.split == split) out.push_back(r);
    }
    return DatasetManifest(std::move(out), version_, scheme_);
}

DatasetManifest DatasetManifest::restrict_to(const IdentitySet& ids) const {
    std::vector<VideoRecord> out;
    for (const auto& r : records_) {
        if (ids.contains(r.identity_id)) out.push_back(r);
    }
    return DatasetManifest(std::move(out), version_, scheme_);
}

DatasetManifest DatasetManifest::with_scheme(ClassScheme scheme) const {
    DatasetManifest copy = *this;
    copy.scheme_ = scheme;
    return copy;
}

const VideoRecord* DatasetManifest::find(std::string_view video_id) const {
    for (const auto& r : records_) {
        if (r.video_id == video_id) return &r;
    }
    return nullptr;
}

std::map<std::string, std::size_t> DatasetManifest::videos_per_identity() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records_) ++counts[r.identity_id];
    return counts;
}

std::string DatasetManifest::hash() const { return sha256_hex(to_json().dump()); }

nlohmann::json DatasetManifest::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records_) {
        recs.push_back({{"video_id", r.video_id},
                        {"path", r.path.string()},
                        {"label", to_string(r.label)},
                        {"technique", to_string(r.technique)},
                        {"engine", r.engine},
                        {"identity_id", r.identity_id},
                        {"dataset_version", r.dataset_version},
                        {"split", to_string(r.split)}});
    }
    return {{"version", version_}, {"class_scheme", to_string(scheme_)}, {"records", std::move(recs)}};
}

std::string DatasetManifest::to_csv() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
    out << "\n";
    for (const auto& r : records_) {
        out << csv_escape(r.video_id) << ',' << csv_escape(r.path.string()) << ',' << to_string(r.label) << ','
            << to_string(r.technique) << ',' << csv_escape(r.engine) << ',' << csv_escape(r.identity_id) << ','
            << csv_escape(r.dataset_version) << ',' << to_string(r.split) << "\n";
    }
    return out.str();
}

DatasetManifest parse_manifest_csv(std::string_view text, const std::filesystem::path& base_dir, ClassScheme scheme) {
    std::vector<std::size_t> lines;
    auto rows = parse_csv_rows(text, lines);
    if (rows.empty()) throw ParseError("manifest is empty (missing header)");

    const auto& header = rows.front();
    if (header.size() != kColumns.size() || !std::equal(header.begin(), header.end(), kColumns.begin())) {
        std::string expected;
        for (auto c : kColumns) expected += (expected.empty() ? "" : ",") + std::string(c);
        throw ParseError("bad manifest header; expected '" + expected + "'");
    }

    std::vector<VideoRecord> records;
    records.reserve(rows.size() - 1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::string where = "line " + std::to_string(lines[i]);
        if (row.size() != kColumns.size()) {
            throw ParseError(where + ": expected " + std::to_string(kColumns.size()) + " fields, got " +
                             std::to_string(row.size()));
        }
        try {
            VideoRecord r;
            r.video_id = row[0];
            r.path = row[1].empty() ? std::filesystem::path{} : resolve_path(row[1], base_dir);
            r.label = parse_label(row[2]);
            r.technique = parse_technique(row[3]);
            r.engine = row[4];
            r.identity_id = row[5];
            r.dataset_version = row[6];
            r.split = parse_split(row[7]);
            records.push_back(std::move(r));
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    std::string version = infer_version(records);
    return DatasetManifest(std::move(records), std::move(version), scheme);
}

DatasetManifest parse_manifest_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                    std::optional<ClassScheme> scheme) {
    const nlohmann::json* recs = &doc;
    std::string version;
    ClassScheme resolved = ClassScheme::binary;
    if (doc.is_object()) {
        if (!doc.contains("records") || !doc["records"].is_array()) {
            throw ParseError("JSON manifest object needs a 'records' array");
        }
        recs = &doc["records"];
        version = doc.value("version", std::string{});
        if (doc.contains("class_scheme")) resolved = parse_class_scheme(doc["class_scheme"].get<std::string>());
    } else if (!doc.is_array()) {
        throw ParseError("JSON manifest must be an array of records or an object with 'records'");
    }
    if (scheme) resolved = *scheme;

    std::vector<VideoRecord> records;
    for (std::size_t i = 0; i < recs->size(); ++i) {
        const auto& j = (*recs)[i];
        const std::string where = "record " + std::to_string(i);
        if (!j.is_object()) throw ParseError(where + ": not an object");
        auto field = [&](std::string_view name) -> std::string {
            auto it = j.find(std::string(name));
            if (it == j.end() || !it->is_string()) {
                throw ParseError(where + ": missing or non-string field '" + std::string(name) + "'");
            }
            return it->get<std::string>();
        };
        try {
            VideoRecord r;
            r.video_id = field("video_id");
            const auto raw_path = field("path");
            r.path = raw_path.empty() ? std::filesystem::path{} : resolve_path(raw_path, base_dir);
            r.label = parse_label(field("label"));
            r.technique = parse_technique(field("technique"));
            r.engine = field("engine");
            r.identity_id = field("identity_id");
            r.dataset_version = field("dataset_version");
            r.split = parse_split(field("split"));
            records.push_back(std::move(r));
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            throw ParseError(msg.starts_with(where) ? msg : where + ": " + msg);
        }
    }
    if (version.empty()) version = infer_version(records);
    return DatasetManifest(std::move(records), std::move(version), resolved);
}

DatasetManifest load_manifest(const std::filesystem::path& path, std::optional<ClassScheme> scheme) {
    if (!std::filesystem::exists(path)) throw ParseError("manifest not found: " + path.string());
    const std::string text = read_file(path);
    const auto base = path.parent_path();
    if (path.extension() == ".json") {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
        return parse_manifest_json(doc, base, scheme);
    }
    return parse_manifest_csv(text, base, scheme.value_or(ClassScheme::binary));
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    if (path.extension() == ".json") atomic_write_json(path, manifest.to_json());
    else atomic_write(path, manifest.to_csv());
}

IdentitySplit split_identities(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw PreconditionError("val_fraction must lie in (0, 1)");
    }
    auto ids = sorted_train_identities(manifest);
    const std::size_t n = ids.size();
    if (n < 2) {
        throw TooFewIdentities("need at least 2 train identities to split, found " + std::to_string(n));
    }
    const std::size_t held = rounded_count(val_fraction, n, 1, n - 1);
    Rng rng(derive_seed(seed, {"split_identities"}));
    rng.shuffle(ids);

    IdentitySplit split;
    split.seed = seed;
    split.held_identities.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(held));
    split.train_identities.insert(ids.begin() + static_cast<std::ptrdiff_t>(held), ids.end());
    return split;
}

DatasetManifest subset_by_identity_fraction(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("fraction must lie in (0, 1]");
    const IdentitySet all = manifest.identities();
    std::vector<std::string> ids(all.begin(), all.end());
    const std::size_t n = ids.size();
    if (n == 0) return manifest;
    const std::size_t keep = rounded_count(fraction, n, 1, n);
    Rng rng(derive_seed(seed, {"subset_by_identity_fraction"}));
    const auto picks = rng.sample_without_replacement(n, keep);
    IdentitySet chosen;
    for (auto i : picks) chosen.insert(ids[i]);
    return manifest.restrict_to(chosen);
}

std::vector<IdentitySplit> kfold_identity_splits(const DatasetManifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw PreconditionError("k-fold needs k >= 2");
    auto ids = sorted_train_identities(manifest);
    const auto n = ids.size();
    if (n < static_cast<std::size_t>(k)) {
        throw TooFewIdentities("k-fold with k=" + std::to_string(k) + " needs at least k identities, found " +
                               std::to_string(n));
    }
    Rng rng(derive_seed(seed, {"kfold_identity_splits"}));
    rng.shuffle(ids);

    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);
    std::vector<IdentitySplit> folds;
    std::size_t offset = 0;
    for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        IdentitySplit split;
        split.seed = seed;
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= offset && i < offset + size) split.held_identities.insert(ids[i]);
            else split.train_identities.insert(ids[i]);
        }
        offset += size;
        folds.push_back(std::move(split));
    }
    return folds;
}

void require_identity_disjoint(const DatasetManifest& a, const DatasetManifest& b, std::string_view context) {
    const auto ids_b = b.identities();
    for (const auto& id : a.identities()) {
        if (ids_b.contains(id)) {
            throw IdentityLeakError(std::string(context) + ": identity '" + id + "' appears on both sides");
        }
    }
}

DatasetManifest scan_directory(const std::filesystem::path& root, const std::string& version) {
    namespace fs = std::filesystem;
    static const std::set<std::string> kExtensions = {".mp4", ".avi", ".mkv", ".mov", ".webm"};
    if (!fs::is_directory(root)) throw ParseError("not a directory: " + root.string());

    std::vector<VideoRecord> records;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file() || !kExtensions.contains(entry.path().extension().string())) continue;
        const auto rel = fs::relative(entry.path(), root);
        std::vector<std::string> parts;
        for (const auto& p : rel) parts.push_back(p.string());
        // split/technique/[engine/]identity/file
        if (parts.size() < 4) continue;
        VideoRecord r;
        r.split = parse_split(parts[0]);
        r.technique = parse_technique(parts[1]);
        r.label = r.technique == Technique::real ? Label::real : Label::fake;
        if (r.technique == Technique::real) {
            if (parts.size() != 4) continue;
            r.engine = "none";
            r.identity_id = parts[2];
        } else {
            if (parts.size() != 5) continue;
            r.engine = parts[2];
            r.identity_id = parts[3];
        }
        r.path = entry.path();
        r.dataset_version = version;
        std::string id = rel.string();
        std::replace(id.begin(), id.end(), '/', '_');
        r.video_id = fs::path(id).replace_extension().string();
        records.push_back(std::move(r));
    }
    std::sort(records.begin(), records.end(),
              [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
    return DatasetManifest(std::move(records), version, ClassScheme::binary);
}

}  // namespace decay_bench::manifest

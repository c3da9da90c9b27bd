#include "decay_bench/extraction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::extraction {

namespace {

std::string frame_name(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.png", k);
    return buf;
}

const std::vector<int> kPngParams = {cv::IMWRITE_PNG_COMPRESSION, 3};

}  // namespace

// ---------------------------------------------------------------------------
// ExtractionConfig

void ExtractionConfig::validate() const {
    if (box_side <= 0) throw ConfigError("extraction.box_side must be > 0");
    if (margin < 0) throw ConfigError("extraction.margin must be >= 0");
    if (margin >= box_side) throw ConfigError("extraction.margin must be smaller than box_side");
    if (!(target_fps > 0)) throw ConfigError("extraction.target_fps must be > 0");
    if (max_frames < 1) throw ConfigError("extraction.max_frames must be >= 1");
    if (detector != "mtcnn") throw ConfigError("extraction.detector must be 'mtcnn'");
    if (mtcnn.min_face_size < 12) throw ConfigError("extraction.mtcnn.min_face_size must be >= 12");
    if (!(mtcnn.scale_factor > 0 && mtcnn.scale_factor < 1)) {
        throw ConfigError("extraction.mtcnn.scale_factor must lie in (0, 1)");
    }
}

nlohmann::json ExtractionConfig::to_json() const {
    return {{"box_side", box_side},
            {"margin", margin},
            {"target_fps", target_fps},
            {"max_frames", max_frames},
            {"detector", detector},
            {"mtcnn",
             {{"min_face_size", mtcnn.min_face_size},
              {"thresholds", mtcnn.thresholds},
              {"scale_factor", mtcnn.scale_factor}}}};
}

ExtractionConfig ExtractionConfig::from_json(const nlohmann::json& j) {
    ExtractionConfig c;
    c.box_side = j.value("box_side", c.box_side);
    c.margin = j.value("margin", c.margin);
    c.target_fps = j.value("target_fps", c.target_fps);
    c.max_frames = j.value("max_frames", c.max_frames);
    c.detector = j.value("detector", c.detector);
    if (j.contains("mtcnn")) {
        const auto& m = j["mtcnn"];
        c.mtcnn.min_face_size = m.value("min_face_size", c.mtcnn.min_face_size);
        if (m.contains("thresholds")) c.mtcnn.thresholds = m["thresholds"].get<std::array<float, 3>>();
        c.mtcnn.scale_factor = m.value("scale_factor", c.mtcnn.scale_factor);
    }
    c.validate();
    return c;
}

std::string ExtractionConfig::fingerprint() const {
    nlohmann::json j = to_json();
    j["weights"] = "facenet-pytorch-2.6.0";
    j["crop"] = "margin-scaled-area-v1";
    return short_hash(json_hash(j));
}

// ---------------------------------------------------------------------------
// Sampling and decoding

std::vector<double> sample_frame_times(double duration, double target_fps, int max_frames) {
    if (!(duration > 0)) throw PreconditionError("sample_frame_times: duration must be > 0");
    if (!(target_fps > 0) || max_frames < 1) throw PreconditionError("sample_frame_times: invalid fps/max_frames");
    const double raw = std::floor(duration * target_fps + 1e-9);
    const int n = std::max(1, static_cast<int>(std::min<double>(raw, max_frames)));
    const double stride = duration / n;
    std::vector<double> times(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) times[static_cast<std::size_t>(k)] = k * stride;
    return times;
}

DecodedSamples decode_samples(const std::filesystem::path& path, double target_fps, int max_frames) {
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) throw DecodeError("cannot open video " + path.string());
    const double fps = cap.get(cv::CAP_PROP_FPS);
    const double count = cap.get(cv::CAP_PROP_FRAME_COUNT);
    if (!(fps > 0) || !(count >= 1)) throw DecodeError("video has no decodable frames: " + path.string());

    const auto n_frames = static_cast<long>(count);
    DecodedSamples out;
    out.duration = static_cast<double>(n_frames) / fps;
    out.times = sample_frame_times(out.duration, target_fps, max_frames);

    std::vector<long> wanted(out.times.size());
    for (std::size_t k = 0; k < out.times.size(); ++k) {
        wanted[k] = std::clamp(std::lround(out.times[k] * fps), 0L, n_frames - 1);
    }
    out.frames.resize(out.times.size());

    cv::Mat current;
    cv::Mat last_good;
    std::size_t next = 0;
    for (long i = 0; next < wanted.size() && i <= wanted.back(); ++i) {
        if (!cap.grab()) break;
        if (i != wanted[next]) continue;
        if (!cap.retrieve(current) || current.empty()) continue;
        last_good = current.clone();
        while (next < wanted.size() && wanted[next] == i) out.frames[next++] = last_good;
    }
    // Container frame counts can overshoot; fall back to the last decoded frame.
    if (last_good.empty()) throw DecodeError("no frame could be decoded from " + path.string());
    for (; next < wanted.size(); ++next) out.frames[next] = last_good;
    return out;
}

cv::Mat crop_face(const cv::Mat& image, const FaceBox& box, int side, int margin) {
    const float mx = static_cast<float>(margin) * (box.x2 - box.x1) / static_cast<float>(side - margin);
    const float my = static_cast<float>(margin) * (box.y2 - box.y1) / static_cast<float>(side - margin);
    const int x1 = static_cast<int>(std::max(box.x1 - mx / 2, 0.0f));
    const int y1 = static_cast<int>(std::max(box.y1 - my / 2, 0.0f));
    const int x2 = static_cast<int>(std::min(box.x2 + mx / 2, static_cast<float>(image.cols)));
    const int y2 = static_cast<int>(std::min(box.y2 + my / 2, static_cast<float>(image.rows)));
    if (x2 <= x1 || y2 <= y1) return {};
    cv::Mat face;
    cv::resize(image(cv::Rect(x1, y1, x2 - x1, y2 - y1)), face, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    return face;
}

FrameSet extract_faces(const manifest::VideoRecord& record, const ExtractionConfig& config, const Mtcnn& detector) {
    config.validate();
    auto samples = decode_samples(record.path, config.target_fps, config.max_frames);
    FrameSet set;
    set.video_id = record.video_id;
    set.source_duration = samples.duration;
    set.config_fingerprint = config.fingerprint();
    for (std::size_t k = 0; k < samples.frames.size(); ++k) {
        if (samples.frames[k].empty()) continue;
        const auto faces = detector.detect(samples.frames[k]);
        if (faces.empty()) continue;
        auto crop = crop_face(samples.frames[k], faces.front(), config.box_side, config.margin);
        if (crop.empty()) continue;
        set.frames.push_back({samples.times[k], std::move(crop)});
    }
    if (set.frames.empty()) {
        throw NoFacesError("no face detected in any of " + std::to_string(samples.frames.size()) +
                           " sampled frames of video '" + record.video_id + "'");
    }
    return set;
}

// ---------------------------------------------------------------------------
// FrameCache

std::filesystem::path FrameCache::entry_dir(const std::string& fingerprint, const std::string& video_id) const {
    return root_ / fingerprint / video_id;
}

std::filesystem::path FrameCache::frame_path(const std::string& fingerprint, const std::string& video_id,
                                             std::size_t k) const {
    return entry_dir(fingerprint, video_id) / frame_name(k);
}

bool FrameCache::contains(const std::string& fingerprint, const std::string& video_id) const {
    return std::filesystem::exists(entry_dir(fingerprint, video_id) / "meta.json");
}

std::optional<FrameSet> FrameCache::load(const std::string& fingerprint, const std::string& video_id) const {
    const auto dir = entry_dir(fingerprint, video_id);
    if (!std::filesystem::exists(dir / "meta.json")) return std::nullopt;
    const auto meta = read_json(dir / "meta.json");
    FrameSet set;
    set.video_id = meta.at("video_id").get<std::string>();
    set.config_fingerprint = meta.at("config_fingerprint").get<std::string>();
    set.source_duration = meta.at("source_duration").get<double>();
    const auto times = meta.at("timestamps").get<std::vector<double>>();
    for (std::size_t k = 0; k < times.size(); ++k) {
        cv::Mat img = cv::imread((dir / frame_name(k)).string(), cv::IMREAD_COLOR);
        if (img.empty()) throw DecodeError("corrupt cache entry " + (dir / frame_name(k)).string());
        set.frames.push_back({times[k], std::move(img)});
    }
    return set;
}

bool FrameCache::store(const FrameSet& frames) const {
    namespace fs = std::filesystem;
    const auto final_dir = entry_dir(frames.config_fingerprint, frames.video_id);
    if (fs::exists(final_dir)) return false;
    fs::create_directories(final_dir.parent_path());
    const auto tmp = unique_temp_sibling(final_dir);
    fs::create_directories(tmp);

    std::vector<double> times;
    for (std::size_t k = 0; k < frames.frames.size(); ++k) {
        if (!cv::imwrite((tmp / frame_name(k)).string(), frames.frames[k].image, kPngParams)) {
            fs::remove_all(tmp);
            throw std::runtime_error("failed to write frame cache image under " + tmp.string());
        }
        times.push_back(frames.frames[k].timestamp);
    }
    nlohmann::json meta = {{"video_id", frames.video_id},
                           {"config_fingerprint", frames.config_fingerprint},
                           {"source_duration", frames.source_duration},
                           {"timestamps", times},
                           {"frames", frames.frames.size()}};
    atomic_write_json(tmp / "meta.json", meta);

    std::error_code ec;
    fs::rename(tmp, final_dir, ec);
    if (ec) {
        // Lost a publish race: the other writer's entry is equivalent.
        fs::remove_all(tmp);
        return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// FrameIndex

int FrameEntry::class_id(manifest::ClassScheme scheme) const {
    if (scheme == manifest::ClassScheme::binary) return label == manifest::Label::real ? 0 : 1;
    return static_cast<int>(technique);
}

std::vector<std::string> FrameIndex::video_ids() const {
    std::vector<std::string> ids;
    for (const auto& e : entries) {
        if (ids.empty() || ids.back() != e.video_id) ids.push_back(e.video_id);
    }
    return ids;
}

FrameIndex FrameIndex::restrict_to(const manifest::IdentitySet& ids) const {
    FrameIndex out;
    out.config_fingerprint = config_fingerprint;
    for (const auto& e : entries) {
        if (ids.contains(e.identity_id)) out.entries.push_back(e);
    }
    return out;
}

manifest::IdentitySet FrameIndex::identities() const {
    manifest::IdentitySet ids;
    for (const auto& e : entries) ids.insert(e.identity_id);
    return ids;
}

nlohmann::json FrameIndex::to_json() const {
    nlohmann::json entries_json = nlohmann::json::array();
    for (const auto& e : entries) {
        entries_json.push_back({{"video_id", e.video_id},
                                {"frame", e.frame},
                                {"timestamp", e.timestamp},
                                {"image", e.image_path.string()},
                                {"label", manifest::to_string(e.label)},
                                {"technique", manifest::to_string(e.technique)},
                                {"identity_id", e.identity_id}});
    }
    return {{"config_fingerprint", config_fingerprint}, {"entries", std::move(entries_json)},
            {"skipped", skip_report()["skipped"]}};
}

std::string FrameIndex::content_hash() const {
    auto j = to_json();
    for (auto& e : j["entries"]) e.erase("image");
    nlohmann::json skips = nlohmann::json::array();
    for (const auto& s : skipped) skips.push_back({s.video_id, s.error_kind});
    j["skipped"] = std::move(skips);
    return json_hash(j);
}

FrameIndex FrameIndex::from_json(const nlohmann::json& j) {
    FrameIndex idx;
    idx.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    for (const auto& e : j.at("entries")) {
        FrameEntry entry;
        entry.video_id = e.at("video_id").get<std::string>();
        entry.frame = e.at("frame").get<std::size_t>();
        entry.timestamp = e.at("timestamp").get<double>();
        entry.image_path = e.at("image").get<std::string>();
        entry.label = manifest::parse_label(e.at("label").get<std::string>());
        entry.technique = manifest::parse_technique(e.at("technique").get<std::string>());
        entry.identity_id = e.at("identity_id").get<std::string>();
        idx.entries.push_back(std::move(entry));
    }
    for (const auto& s : j.value("skipped", nlohmann::json::array())) {
        idx.skipped.push_back({s.at("video_id").get<std::string>(), s.at("error").get<std::string>(),
                               s.at("message").get<std::string>()});
    }
    return idx;
}

nlohmann::json FrameIndex::skip_report() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : skipped) list.push_back({{"video_id", s.video_id}, {"error", s.error_kind}, {"message", s.message}});
    return {{"config_fingerprint", config_fingerprint}, {"skipped", std::move(list)}, {"count", skipped.size()}};
}

FrameSet load_frame_set(const FrameCache& cache, const std::string& fingerprint, const std::string& video_id) {
    auto set = cache.load(fingerprint, video_id);
    if (!set) throw MissingUpstream("frame cache has no entry for video '" + video_id + "' under " + fingerprint);
    return std::move(*set);
}

FrameIndex build_frame_dataset(const manifest::DatasetManifest& manifest, const ExtractionConfig& config,
                               const BuildOptions& options) {
    config.validate();
    const FrameCache cache(options.cache_root);
    const std::string fp = config.fingerprint();
    const auto& records = manifest.records();

    struct Slot {
        std::optional<std::vector<double>> times;
        std::optional<SkippedVideo> skipped;
        bool cache_hit = false;
    };
    std::vector<Slot> slots(records.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;

    auto worker = [&] {
        std::optional<Mtcnn> detector;
        for (std::size_t i = next++; i < records.size(); i = next++) {
            const auto& rec = records[i];
            try {
                if (auto cached = cache.load(fp, rec.video_id)) {
                    std::vector<double> times;
                    for (const auto& f : cached->frames) times.push_back(f.timestamp);
                    slots[i].times = std::move(times);
                    slots[i].cache_hit = true;
                    log::debug("extract.cache_hit", {{"video_id", rec.video_id}});
                    continue;
                }
                if (!detector) detector.emplace(options.weights_dir, config.mtcnn);
                auto frames = extract_faces(rec, config, *detector);
                cache.store(frames);
                std::vector<double> times;
                for (const auto& f : frames.frames) times.push_back(f.timestamp);
                slots[i].times = std::move(times);
                log::debug("extract.video", {{"video_id", rec.video_id}, {"frames", frames.size()}});
            } catch (const Error& e) {
                slots[i].skipped = SkippedVideo{rec.video_id, e.kind(), e.what()};
                std::lock_guard lock(log_mutex);
                log::warn("extract.skip", {{"video_id", rec.video_id}, {"error", e.kind()}, {"message", e.what()}});
            }
        }
    };

    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(std::max<std::size_t>(records.size(), 1))));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    FrameIndex index;
    index.config_fingerprint = fp;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (slots[i].skipped) {
            index.skipped.push_back(*slots[i].skipped);
            continue;
        }
        if (slots[i].cache_hit) ++index.cache_hits;
        else ++index.extracted;
        const auto& times = *slots[i].times;
        for (std::size_t k = 0; k < times.size(); ++k) {
            index.entries.push_back({rec.video_id, k, times[k], cache.frame_path(fp, rec.video_id, k), rec.label,
                                     rec.technique, rec.identity_id});
        }
    }
    log::info("extract.done", {{"videos", records.size()},
                               {"cache_hits", index.cache_hits},
                               {"extracted", index.extracted},
                               {"skipped", index.skipped.size()},
                               {"frames", index.entries.size()}});
    return index;
}

}  // namespace decay_bench::extraction

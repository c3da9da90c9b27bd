#include "decay_bench/embedding_store.hpp"

#include <cstring>
#include <regex>

#include "decay_bench/errors.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::frame {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

}  // namespace

void write_npy(const std::filesystem::path& path, const torch::Tensor& matrix) {
    if (matrix.dim() != 2) throw PreconditionError("write_npy expects a 2-D tensor");
    const auto m = matrix.to(torch::kFloat32).contiguous().cpu();
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(m.size(0)) + ", " +
                         std::to_string(m.size(1)) + "), }";
    // Magic (6) + version (2) + length (2) + header, padded to 64 bytes, ending in '\n'.
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');

    std::string bytes(kMagic, 6);
    bytes.push_back('\x01');
    bytes.push_back('\x00');
    const auto len = static_cast<std::uint16_t>(header.size());
    bytes.push_back(static_cast<char>(len & 0xff));
    bytes.push_back(static_cast<char>(len >> 8));
    bytes += header;
    bytes.append(static_cast<const char*>(m.data_ptr()), m.numel() * sizeof(float));
    atomic_write(path, bytes);
}

torch::Tensor read_npy(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
        throw ParseError(path.string() + ": not a .npy file");
    }
    const auto major = static_cast<unsigned char>(bytes[6]);
    std::size_t header_len = 0, offset = 0;
    if (major == 1) {
        header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
        offset = 10;
    } else if (major == 2 || major == 3) {
        if (bytes.size() < 12) throw ParseError(path.string() + ": truncated header");
        for (int i = 3; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + i]);
        offset = 12;
    } else {
        throw ParseError(path.string() + ": unsupported .npy version");
    }
    if (bytes.size() < offset + header_len) throw ParseError(path.string() + ": truncated header");
    const std::string header = bytes.substr(offset, header_len);

    std::smatch m;
    static const std::regex descr_re(R"('descr'\s*:\s*'([<|=]?)([fi])(\d+)')");
    static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))");
    if (!std::regex_search(header, m, descr_re)) throw ParseError(path.string() + ": missing descr");
    const std::string kind = m[2].str();
    const int width = std::stoi(m[3].str());
    if (kind != "f" || (width != 4 && width != 8)) throw ParseError(path.string() + ": unsupported dtype");
    if (!std::regex_search(header, m, fortran_re) || m[1].str() != "False") {
        throw ParseError(path.string() + ": Fortran-ordered arrays are not supported");
    }
    if (!std::regex_search(header, m, shape_re)) throw ParseError(path.string() + ": expected a 2-D shape");
    const auto rows = std::stoll(m[1].str());
    const auto cols = std::stoll(m[2].str());

    const std::size_t data_offset = offset + header_len;
    const std::size_t expected = static_cast<std::size_t>(rows * cols) * width;
    if (bytes.size() != data_offset + expected) throw ParseError(path.string() + ": data size mismatch");
    const auto dtype = width == 4 ? torch::kFloat32 : torch::kFloat64;
    auto t = torch::empty({rows, cols}, dtype);
    std::memcpy(t.data_ptr(), bytes.data() + data_offset, expected);
    return t.to(torch::kFloat32);
}

EmbeddingStore::EmbeddingStore(std::filesystem::path cache_root, std::string extractor_fingerprint)
    : dir_(cache_root / "emb" / extractor_fingerprint), fingerprint_(std::move(extractor_fingerprint)) {}

std::filesystem::path EmbeddingStore::matrix_path(const std::string& video_id) const {
    return dir_ / (video_id + ".npy");
}

std::filesystem::path EmbeddingStore::meta_path(const std::string& video_id) const {
    return dir_ / (video_id + ".json");
}

bool EmbeddingStore::contains(const std::string& video_id) const {
    return std::filesystem::exists(matrix_path(video_id)) && std::filesystem::exists(meta_path(video_id));
}

void EmbeddingStore::save(const EmbeddingSequence& seq) const {
    if (!seq.embeddings.defined() || seq.embeddings.dim() != 2 || seq.length() < 1) {
        throw PreconditionError("embedding sequence for " + seq.video_id + " is empty");
    }
    std::filesystem::create_directories(dir_);
    write_npy(matrix_path(seq.video_id), seq.embeddings);
    // The sidecar is written last; its presence marks a complete entry.
    atomic_write_json(meta_path(seq.video_id), {{"video_id", seq.video_id},
                                                {"dimension", seq.dim()},
                                                {"length", seq.length()},
                                                {"order", "timestamp_ascending"},
                                                {"timestamps", seq.timestamps},
                                                {"label", seq.label},
                                                {"binary_label", manifest::to_string(seq.binary_label)},
                                                {"technique", manifest::to_string(seq.technique)},
                                                {"identity_id", seq.identity_id},
                                                {"extractor", fingerprint_}});
}

EmbeddingSequence EmbeddingStore::load(const std::string& video_id) const {
    if (!contains(video_id)) {
        throw MissingEmbeddings("no embeddings for video '" + video_id + "' under " + dir_.string());
    }
    const auto meta = read_json(meta_path(video_id));
    EmbeddingSequence seq;
    seq.video_id = video_id;
    seq.embeddings = read_npy(matrix_path(video_id));
    if (seq.dim() != meta.at("dimension").get<std::int64_t>() || seq.length() != meta.at("length").get<std::int64_t>()) {
        throw IntegrityError("embedding matrix for '" + video_id + "' disagrees with its metadata");
    }
    seq.timestamps = meta.at("timestamps").get<std::vector<double>>();
    seq.label = meta.at("label").get<int>();
    seq.binary_label = manifest::parse_label(meta.at("binary_label").get<std::string>());
    seq.technique = manifest::parse_technique(meta.at("technique").get<std::string>());
    seq.identity_id = meta.at("identity_id").get<std::string>();
    return seq;
}

}  // namespace decay_bench::frame

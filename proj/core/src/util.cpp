#include "decay_bench/util.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>
#include <unistd.h>

#include "decay_bench/errors.hpp"

namespace decay_bench {

namespace {

std::string to_hex(const unsigned char* data, unsigned int len) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kDigits[data[i] >> 4]);
        out.push_back(kDigits[data[i] & 0xF]);
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    return to_hex(digest, len);
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string json_hash(const Json& value) {
    // nlohmann::json objects are std::map-backed, so dump() is key-sorted.
    return sha256_hex(value.dump());
}

fs::path unique_temp_sibling(const fs::path& target) {
    static std::atomic<unsigned long> counter{0};
    std::ostringstream name;
    name << "." << target.filename().string() << ".tmp-" << ::getpid() << "-" << counter++;
    return target.parent_path() / name.str();
}

void atomic_write(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = unique_temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void atomic_write_json(const fs::path& path, const Json& value) {
    atomic_write(path, value.dump(2) + "\n");
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json read_json(const fs::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::size_t rounded_count(double fraction, std::size_t n, std::size_t lo, std::size_t hi) {
    // The epsilon keeps exact halves (0.5 * 3 = 1.5) rounding up despite
    // representation error in the fraction.
    auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
    if (count < lo) count = lo;
    if (count > hi) count = hi;
    return count;
}

}  // namespace decay_bench

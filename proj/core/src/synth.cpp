#include "decay_bench/synth.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"
#include "decay_bench/rng.hpp"
#include "decay_bench/util.hpp"

namespace decay_bench::synth {

namespace {

std::string pad2(int v) {
    return (v < 10 ? "0" : "") + std::to_string(v);
}

void apply_artifacts(cv::Mat& img, const Artifacts& art, int cx, int cy, int ax, int ay, int ey, int mouth_y) {
    cv::Mat f;
    img.convertTo(f, CV_32FC3);
    cv::Mat q;
    if (art.eye_quantise) {
        f.copyTo(q);
        for (int y = 0; y < q.rows; ++y) {
            auto* row = q.ptr<cv::Vec3f>(y);
            for (int x = 0; x < q.cols; ++x) {
                for (int c = 0; c < 3; ++c) row[x][c] = std::floor(row[x][c] / 24.0f) * 24.0f;
            }
        }
    }
    for (int y = 0; y < f.rows; ++y) {
        auto* row = f.ptr<cv::Vec3f>(y);
        for (int x = 0; x < f.cols; ++x) {
            const double dx = (x - cx) / static_cast<double>(ax), dy = (y - cy) / static_cast<double>(ay);
            const bool in_face = dx * dx + dy * dy < 1.0;
            if (art.mouth_checker && std::abs(x - cx) < 15 && std::abs(y - mouth_y) < 9) {
                const float s = ((x / 3 + y / 3) % 2 == 0) ? 18.0f : -18.0f;
                for (int c = 0; c < 3; ++c) row[x][c] += s;
            }
            if (!in_face) continue;
            if (art.colour_cast) {
                row[x][0] += static_cast<float>(14.0 * art.cast_strength);
                row[x][1] -= static_cast<float>(8.0 * art.cast_strength);
            }
            if (art.face_stripes) {
                const auto s = static_cast<float>(16.0 * std::sin(y * 2.0 * std::numbers::pi / 8.0));
                for (int c = 0; c < 3; ++c) row[x][c] += s;
            }
            if (art.eye_quantise && std::abs(y - ey) < 8) row[x] = q.at<cv::Vec3f>(y, x);
        }
    }
    f.convertTo(img, CV_8UC3);  // saturating
}

}  // namespace

std::string_view to_string(Generation g) { return g == Generation::a ? "A" : "B"; }

Generation parse_generation(std::string_view s) {
    if (s == "A" || s == "a") return Generation::a;
    if (s == "B" || s == "b") return Generation::b;
    throw ConfigError("unknown synthetic generation '" + std::string(s) + "'");
}

void SynthConfig::validate() const {
    if (identities < 2) throw ConfigError("synth: identities must be >= 2");
    if (real_per_identity < 1 || fake_per_identity < 1) throw ConfigError("synth: need real and fake videos");
    if (frame_size < 96) throw ConfigError("synth: frame_size must be >= 96 for face detection");
    if (frames_per_video < 1) throw ConfigError("synth: frames_per_video must be >= 1");
    if (!(fps > 0.0)) throw ConfigError("synth: fps must be > 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("synth: test_fraction must be in (0,1)");
}

nlohmann::json SynthConfig::to_json() const {
    return {{"identities", identities},
            {"real_per_identity", real_per_identity},
            {"fake_per_identity", fake_per_identity},
            {"frame_size", frame_size},
            {"frames_per_video", frames_per_video},
            {"fps", fps},
            {"test_fraction", test_fraction},
            {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.identities = j.value("identities", c.identities);
    c.real_per_identity = j.value("real_per_identity", c.real_per_identity);
    c.fake_per_identity = j.value("fake_per_identity", c.fake_per_identity);
    c.frame_size = j.value("frame_size", c.frame_size);
    c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
    c.fps = j.value("fps", c.fps);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

Persona make_persona(std::uint64_t seed) {
    Rng rng(seed);
    Persona p;
    p.background = cv::Scalar(rng.uniform_int(30, 119), rng.uniform_int(30, 119), rng.uniform_int(30, 119));
    const double t = rng.uniform01();
    p.skin = cv::Scalar(60 + 90 * t, 90 + 90 * t, 130 + 100 * t);
    p.axis_x = static_cast<int>(rng.uniform_int(28, 32));
    p.axis_y = static_cast<int>(rng.uniform_int(36, 40));
    p.hair = cv::Scalar(rng.uniform_int(0, 59), rng.uniform_int(0, 59), rng.uniform_int(0, 59));
    return p;
}

Artifacts fake_artifacts(Generation g, int k) {
    Artifacts a;
    if (g == Generation::a) {
        a.mouth_checker = true;
        a.colour_cast = k % 3 == 1;
        return a;
    }
    switch (k % 3) {
        case 0: a.face_stripes = true; break;
        case 1: a.eye_quantise = true; break;
        default:
            a.face_stripes = a.eye_quantise = a.colour_cast = true;
            a.cast_strength = 0.5;
    }
    return a;
}

manifest::Technique fake_technique(int k) {
    static constexpr manifest::Technique order[] = {manifest::Technique::face_swap, manifest::Technique::lip_sync,
                                                    manifest::Technique::avatar};
    return order[k % 3];
}

cv::Mat render_frame(const Persona& p, const Artifacts& art, std::uint64_t motion_seed, int frame, int size) {
    Rng rng(derive_seed(motion_seed, {"frame", std::to_string(frame)}));
    cv::Mat img(size, size, CV_8UC3, p.background);
    const int cx = size / 2 + static_cast<int>(rng.uniform_int(-3, 3));
    const int cy = size / 2 + static_cast<int>(rng.uniform_int(-3, 3));
    const int ax = p.axis_x, ay = p.axis_y;

    cv::ellipse(img, {cx, cy}, {ax, ay}, 0, 0, 360, p.skin, -1);
    cv::ellipse(img, {cx, cy - ay + 10}, {ax + 2, 16}, 0, 180, 360, p.hair, -1);
    const int ex = static_cast<int>(ax * 0.45), ey = cy - 8;
    for (int s : {-1, 1}) {
        cv::ellipse(img, {cx + s * ex, ey}, {7, 4}, 0, 0, 360, cv::Scalar(235, 235, 235), -1);
        cv::circle(img, {cx + s * ex, ey}, 3, cv::Scalar(30, 20, 10), -1);
        cv::line(img, {cx + s * ex - 7, ey - 8}, {cx + s * ex + 7, ey - 9}, p.hair, 2);
    }
    const cv::Scalar dark = p.skin * 0.6;
    cv::line(img, {cx, ey + 4}, {cx - 3, cy + 10}, dark, 2);
    cv::line(img, {cx - 3, cy + 10}, {cx + 3, cy + 10}, dark, 2);
    const int mouth_y = cy + 20;
    const int open = static_cast<int>(rng.uniform_int(3, 7));  // talking
    cv::ellipse(img, {cx, mouth_y}, {11, open}, 0, 0, 360, cv::Scalar(70, 60, 150), -1);
    cv::GaussianBlur(img, img, {3, 3}, 0.8);

    apply_artifacts(img, art, cx, cy, ax, ay, ey, mouth_y);
    return img;
}

manifest::DatasetManifest generate_corpus(const std::filesystem::path& root, Generation generation,
                                          const SynthConfig& config) {
    config.validate();
    const std::string version = std::string("synth-") + std::string(to_string(generation));
    const std::string prefix = std::string(to_string(generation));
    std::filesystem::create_directories(root / "videos");

    const auto n = static_cast<std::size_t>(config.identities);
    const auto n_test = rounded_count(config.test_fraction, n, 1, n - 1);
    Rng split_rng(derive_seed(config.seed, {"synth_split", prefix}));
    std::vector<bool> is_test(n, false);
    for (auto i : split_rng.sample_without_replacement(n, n_test)) is_test[i] = true;

    std::vector<manifest::VideoRecord> records;
    for (int i = 0; i < config.identities; ++i) {
        const std::string identity = prefix + "_p" + pad2(i);
        const auto persona = make_persona(derive_seed(config.seed, {"persona", prefix, std::to_string(i)}));
        const int total = config.real_per_identity + config.fake_per_identity;
        for (int v = 0; v < total; ++v) {
            manifest::VideoRecord r;
            r.video_id = identity + "_v" + std::to_string(v);
            r.identity_id = identity;
            r.dataset_version = version;
            r.split = is_test[i] ? manifest::Split::test : manifest::Split::train;
            Artifacts art;
            if (v >= config.real_per_identity) {
                const int k = v - config.real_per_identity;
                art = fake_artifacts(generation, k);
                r.label = manifest::Label::fake;
                r.technique = fake_technique(k);
                r.engine = "synth" + prefix + "-" + std::string(manifest::to_string(r.technique));
            }
            const auto rel = std::filesystem::path("videos") / identity / (r.video_id + ".mkv");
            std::filesystem::create_directories(root / rel.parent_path());
            const auto out = root / rel;
            cv::VideoWriter writer(out.string(), cv::VideoWriter::fourcc('F', 'F', 'V', '1'), config.fps,
                                   {config.frame_size, config.frame_size});
            if (!writer.isOpened()) throw DecodeError("cannot open video writer for " + out.string());
            const auto motion = derive_seed(config.seed, {"motion", r.video_id});
            for (int k = 0; k < config.frames_per_video; ++k) {
                writer.write(render_frame(persona, art, motion, k, config.frame_size));
            }
            writer.release();
            r.path = rel;
            records.push_back(std::move(r));
        }
    }
    manifest::DatasetManifest m(std::move(records), version, manifest::ClassScheme::binary);
    manifest::save_manifest(m, root / "manifest.csv");
    log::info("synth.corpus", {{"root", root.string()},
                               {"version", version},
                               {"videos", m.size()},
                               {"test_identities", n_test}});
    return manifest::load_manifest(root / "manifest.csv");
}

}  // namespace decay_bench::synth

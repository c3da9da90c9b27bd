#include "decay_bench/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "decay_bench/errors.hpp"
#include "decay_bench/log.hpp"

namespace decay_bench::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double pct(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

void check_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw PreconditionError("scores and labels differ in length");
    bool pos = false, neg = false;
    for (int y : labels) {
        if (y != 0 && y != 1) throw PreconditionError("binary labels must be 0 or 1");
        (y ? pos : neg) = true;
    }
    if (!pos || !neg) throw SingleClassError("both classes must be present");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    return idx;
}

MeanStd mean_std(std::vector<double> values) {
    MeanStd m;
    m.values = std::move(values);
    if (m.values.empty()) return m;
    const double n = static_cast<double>(m.values.size());
    m.mean = std::accumulate(m.values.begin(), m.values.end(), 0.0) / n;
    double s = 0.0;
    for (double v : m.values) s += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(s / n);
    return m;
}

std::string fmt(double v, int digits = 2) {
    if (!std::isfinite(v)) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string fmt_ms(const AggregateReport& r, const std::string& key) {
    const auto it = r.scalars.find(key);
    if (it == r.scalars.end()) return "n/a";
    if (it->second.values.size() < 2) return fmt(it->second.mean);
    return fmt(it->second.mean) + " ± " + fmt(it->second.std);
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* palette(std::size_t i) {
    static const char* colours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colours[i % 10];
}

}  // namespace

void PredictionSet::validate() const {
    const int c = num_classes();
    for (const auto& p : items) {
        if (static_cast<int>(p.probabilities.size()) != c) {
            throw PreconditionError("prediction for '" + p.video_id + "' has the wrong number of classes");
        }
        const double sum = std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-6) throw PreconditionError("probabilities of '" + p.video_id + "' do not sum to 1");
        if (p.true_class < 0 || p.true_class >= c || p.predicted_class < 0 || p.predicted_class >= c) {
            throw PreconditionError("class of '" + p.video_id + "' outside the class scheme");
        }
    }
}

std::vector<double> PredictionSet::fake_scores() const {
    if (scheme != manifest::ClassScheme::binary) throw PreconditionError("fake_scores needs a binary prediction set");
    std::vector<double> s;
    for (const auto& p : items) s.push_back(p.probabilities[1]);
    return s;
}

std::vector<int> PredictionSet::fake_labels() const {
    if (scheme != manifest::ClassScheme::binary) throw PreconditionError("fake_labels needs a binary prediction set");
    std::vector<int> y;
    for (const auto& p : items) y.push_back(p.true_class);
    return y;
}

PredictionSet PredictionSet::filter_engine(const std::string& engine) const {
    PredictionSet out;
    out.scheme = scheme;
    for (const auto& p : items) {
        if (p.engine == engine) out.items.push_back(p);
    }
    return out;
}

nlohmann::json PredictionSet::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : items) {
        rows.push_back({{"video_id", p.video_id},
                        {"true_class", p.true_class},
                        {"predicted_class", p.predicted_class},
                        {"probabilities", p.probabilities},
                        {"dataset_version", p.dataset_version},
                        {"technique", manifest::to_string(p.technique)},
                        {"engine", p.engine},
                        {"identity_id", p.identity_id}});
    }
    return {{"class_scheme", manifest::to_string(scheme)},
            {"class_names", manifest::class_names(scheme)},
            {"predictions", rows},
            {"unscored", unscored}};
}

PredictionSet PredictionSet::from_json(const nlohmann::json& j) {
    PredictionSet s;
    s.scheme = manifest::parse_class_scheme(j.at("class_scheme").get<std::string>());
    for (const auto& r : j.at("predictions")) {
        Prediction p;
        p.video_id = r.at("video_id").get<std::string>();
        p.true_class = r.at("true_class").get<int>();
        p.predicted_class = r.at("predicted_class").get<int>();
        p.probabilities = r.at("probabilities").get<std::vector<double>>();
        p.dataset_version = r.at("dataset_version").get<std::string>();
        p.technique = manifest::parse_technique(r.at("technique").get<std::string>());
        p.engine = r.at("engine").get<std::string>();
        p.identity_id = r.value("identity_id", "");
        s.items.push_back(std::move(p));
    }
    s.unscored = j.value("unscored", std::vector<std::string>{});
    s.validate();
    return s;
}

Prediction make_prediction(const manifest::VideoRecord& record, manifest::ClassScheme scheme,
                           std::vector<double> probabilities) {
    Prediction p;
    p.video_id = record.video_id;
    p.true_class = record.class_id(scheme);
    p.predicted_class = static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) -
                                         probabilities.begin());
    p.probabilities = std::move(probabilities);
    p.dataset_version = record.dataset_version;
    p.technique = record.technique;
    p.engine = record.engine;
    p.identity_id = record.identity_id;
    return p;
}

PredictionSet to_binary(const PredictionSet& set) {
    if (set.scheme == manifest::ClassScheme::binary) return set;
    PredictionSet out;
    out.scheme = manifest::ClassScheme::binary;
    out.unscored = set.unscored;
    for (const auto& p : set.items) {
        Prediction b = p;
        double fake = 0.0;
        for (std::size_t c = 1; c < p.probabilities.size(); ++c) fake += p.probabilities[c];
        b.probabilities = {p.probabilities[0], fake};
        b.true_class = p.true_class == 0 ? 0 : 1;
        b.predicted_class = fake > p.probabilities[0] ? 1 : 0;
        out.items.push_back(std::move(b));
    }
    return out;
}

nlohmann::json ConfusionReport::to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : per_class) {
        classes.push_back({{"name", c.name},
                           {"precision", c.precision},
                           {"recall", c.recall},
                           {"f1", c.f1},
                           {"support", c.support},
                           {"predicted", c.predicted},
                           {"precision_undefined", c.precision_undefined},
                           {"recall_undefined", c.recall_undefined}});
    }
    return {{"n", n}, {"accuracy", accuracy}, {"per_class", classes}, {"confusion_matrix", matrix}};
}

ConfusionReport confusion_metrics(const PredictionSet& set) {
    if (set.items.empty()) throw EmptyInput("confusion_metrics needs at least one prediction");
    set.validate();
    const int c = set.num_classes();
    ConfusionReport r;
    r.n = static_cast<std::int64_t>(set.items.size());
    r.matrix.assign(c, std::vector<std::int64_t>(c, 0));
    std::int64_t correct = 0;
    for (const auto& p : set.items) {
        ++r.matrix[p.true_class][p.predicted_class];
        if (p.true_class == p.predicted_class) ++correct;
    }
    r.accuracy = pct(correct, r.n);
    const auto names = manifest::class_names(set.scheme);
    for (int k = 0; k < c; ++k) {
        ClassMetrics m;
        m.name = names[k];
        const std::int64_t tp = r.matrix[k][k];
        for (int j = 0; j < c; ++j) {
            m.support += r.matrix[k][j];
            m.predicted += r.matrix[j][k];
        }
        m.precision_undefined = m.predicted == 0;
        m.recall_undefined = m.support == 0;
        m.precision = pct(tp, m.predicted);
        m.recall = pct(tp, m.support);
        m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        r.per_class.push_back(m);
    }
    return r;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_scores(scores, labels);
    const auto n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Twice the Mann-Whitney U: tied groups share the average rank, kept
    // integral by doubling.
    double twice_rank_sum = 0.0;
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const double twice_avg_rank = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
        for (auto k = i; k < j; ++k) {
            if (labels[idx[k]] == 1) {
                twice_rank_sum += twice_avg_rank;
                ++pos;
            }
        }
        i = j;
    }
    const auto neg = static_cast<std::int64_t>(n) - pos;
    const double twice_u = twice_rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1);
    return 100.0 * (twice_u / 2.0) / (static_cast<double>(pos) * static_cast<double>(neg));
}

double multiclass_auroc(const PredictionSet& set) {
    set.validate();
    const int c = set.num_classes();
    std::vector<int> present(c, 0);
    for (const auto& p : set.items) present[p.true_class] = 1;
    if (std::accumulate(present.begin(), present.end(), 0) < 2) {
        throw SingleClassError("multiclass AUROC needs at least two classes present");
    }
    if (c == 2) {
        std::vector<double> s;
        std::vector<int> y;
        for (const auto& p : set.items) {
            s.push_back(p.probabilities[1]);
            y.push_back(p.true_class);
        }
        return auroc(s, y);
    }
    double sum = 0.0;
    int used = 0;
    for (int k = 0; k < c; ++k) {
        if (!present[k]) continue;
        std::vector<double> s;
        std::vector<int> y;
        for (const auto& p : set.items) {
            s.push_back(p.probabilities[k]);
            y.push_back(p.true_class == k ? 1 : 0);
        }
        sum += auroc(s, y);
        ++used;
    }
    return sum / used;
}

std::vector<CurvePoint> pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_scores(scores, labels);
    const auto idx = descending(scores);
    const auto total_pos = std::count(labels.begin(), labels.end(), 1);
    std::vector<CurvePoint> out;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? tp : fp) += 1;
            ++j;
        }
        out.push_back({scores[idx[i]], static_cast<double>(tp) / static_cast<double>(total_pos),
                       static_cast<double>(tp) / static_cast<double>(tp + fp)});
        i = j;
    }
    return out;
}

std::vector<CurvePoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_scores(scores, labels);
    const auto idx = descending(scores);
    const auto total_pos = std::count(labels.begin(), labels.end(), 1);
    const auto total_neg = static_cast<std::int64_t>(labels.size()) - total_pos;
    std::vector<CurvePoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? tp : fp) += 1;
            ++j;
        }
        out.push_back({scores[idx[i]], static_cast<double>(fp) / static_cast<double>(total_neg),
                       static_cast<double>(tp) / static_cast<double>(total_pos)});
        i = j;
    }
    return out;
}

nlohmann::json curve_json(const std::vector<CurvePoint>& curve) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : curve) out.push_back({number_or_null(p.threshold), p.x, p.y});
    return out;
}

nlohmann::json EvaluationReport::to_json() const {
    return {{"class_scheme", manifest::to_string(scheme)},
            {"class_names", class_names},
            {"accuracy", confusion.accuracy},
            {"auroc", number_or_null(auroc)},
            {"confusion", confusion.to_json()},
            {"pr_curve", {{"columns", {"threshold", "recall", "precision"}}, {"points", curve_json(pr)}}},
            {"roc_curve", {{"columns", {"threshold", "fpr", "tpr"}}, {"points", curve_json(roc)}}},
            {"warnings", warnings},
            {"provenance", provenance}};
}

std::map<std::string, double> EvaluationReport::scalars() const {
    std::map<std::string, double> s{{"accuracy", confusion.accuracy}, {"auroc", auroc}};
    for (const auto& c : confusion.per_class) {
        s[c.name + ".precision"] = c.precision;
        s[c.name + ".recall"] = c.recall;
        s[c.name + ".f1"] = c.f1;
    }
    return s;
}

EvaluationReport evaluate_predictions(const PredictionSet& set) {
    EvaluationReport r;
    r.scheme = set.scheme;
    r.class_names = manifest::class_names(set.scheme);
    r.confusion = confusion_metrics(set);
    try {
        r.auroc = multiclass_auroc(set);
        if (set.scheme == manifest::ClassScheme::binary) {
            r.pr = pr_curve(set.fake_scores(), set.fake_labels());
            r.roc = roc_curve(set.fake_scores(), set.fake_labels());
        }
    } catch (const SingleClassError&) {
        r.auroc = kNaN;
        r.warnings.push_back("only one class present: AUROC and curves undefined");
    }
    for (const auto& c : r.confusion.per_class) {
        if (c.precision_undefined) r.warnings.push_back("class '" + c.name + "' never predicted: precision set to 0");
    }
    if (!set.unscored.empty()) {
        r.warnings.push_back(std::to_string(set.unscored.size()) + " video(s) without frames were not scored");
    }
    return r;
}

nlohmann::json AggregateReport::to_json() const {
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [k, v] : scalars) {
        nlohmann::json vals = nlohmann::json::array();
        for (double x : v.values) vals.push_back(number_or_null(x));
        s[k] = {{"mean", number_or_null(v.mean)}, {"std", number_or_null(v.std)}, {"values", vals}};
    }
    nlohmann::json m = nlohmann::json::array();
    for (const auto& r : models) m.push_back(r.to_json());
    return {{"aggregation_basis", basis},
            {"std_definition", "population standard deviation"},
            {"num_models", models.size()},
            {"scalars", s},
            {"models", m},
            {"warnings", warnings}};
}

AggregateReport aggregate_reports(std::vector<EvaluationReport> reports, std::string basis) {
    if (reports.empty()) throw EmptyInput("nothing to aggregate");
    AggregateReport a;
    a.basis = std::move(basis);
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : reports) {
        for (const auto& [k, v] : r.scalars()) values[k].push_back(v);
        for (const auto& w : r.warnings) {
            if (std::find(a.warnings.begin(), a.warnings.end(), w) == a.warnings.end()) a.warnings.push_back(w);
        }
    }
    for (auto& [k, v] : values) a.scalars[k] = mean_std(std::move(v));
    a.models = std::move(reports);
    return a;
}

PredictionSet predict_frame_model(frame::FrameModel& model, const extraction::FrameIndex& index,
                                  const manifest::DatasetManifest& manifest) {
    const auto scheme =
        model.config().num_classes == 2 ? manifest::ClassScheme::binary : manifest::ClassScheme::multiclass;
    std::map<std::string, extraction::FrameIndex> by_video;
    for (const auto& e : index.entries) {
        auto& sub = by_video[e.video_id];
        sub.config_fingerprint = index.config_fingerprint;
        sub.entries.push_back(e);
    }
    PredictionSet set;
    set.scheme = scheme;
    for (const auto& r : manifest.records()) {
        const auto it = by_video.find(r.video_id);
        if (it == by_video.end()) {
            set.unscored.push_back(r.video_id);
            continue;
        }
        const auto frames = frame::frames_for_video(it->second, r.video_id);
        set.items.push_back(make_prediction(r, scheme, frame::aggregate_video(frame::predict_frames(model, frames))));
    }
    return set;
}

PredictionSet predict_temporal_model(temporal::TemporalModel& model, const frame::EmbeddingStore& store,
                                     const manifest::DatasetManifest& manifest) {
    const auto scheme =
        model.config().num_classes == 2 ? manifest::ClassScheme::binary : manifest::ClassScheme::multiclass;
    PredictionSet set;
    set.scheme = scheme;
    for (const auto& r : manifest.records()) {
        if (!store.contains(r.video_id)) {
            set.unscored.push_back(r.video_id);
            continue;
        }
        const auto seq = store.load(r.video_id);
        set.items.push_back(make_prediction(r, scheme, temporal::predict_video_temporal(model, seq)));
    }
    return set;
}

AggregateReport cross_evaluate(const std::vector<PredictionSet>& per_model, const std::string& test_version,
                               const std::vector<std::string>& training_versions) {
    if (per_model.empty()) throw EmptyInput("cross_evaluate needs at least one model");
    std::vector<EvaluationReport> reports;
    for (const auto& set : per_model) {
        auto binary = to_binary(set);
        reports.push_back(evaluate_predictions(binary));
        reports.back().provenance["source_class_scheme"] = manifest::to_string(set.scheme);
    }
    auto agg = aggregate_reports(std::move(reports), per_model.size() > 1 ? "cross-validation fold models"
                                                                          : "single model");
    if (std::find(training_versions.begin(), training_versions.end(), test_version) != training_versions.end()) {
        agg.warnings.push_back("same_version: test version '" + test_version + "' was also used for training");
        log::warn("evaluate.same_version", {{"version", test_version}});
    }
    return agg;
}

PcaResult pca_features(const torch::Tensor& data, int k) {
    if (!data.defined() || data.dim() != 2) throw PreconditionError("pca_features needs an N x D matrix");
    const auto n = data.size(0), d = data.size(1);
    if (k < 1) throw PreconditionError("components must be >= 1");
    if (n <= k || d < k) {
        throw DegenerateInput("PCA with " + std::to_string(k) + " components needs N > k and D >= k");
    }
    const auto x = data.to(torch::kFloat64).contiguous();
    Eigen::MatrixXd m(n, d);
    const double* p = x.data_ptr<double>();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) m(i, j) = p[i * d + j];
    }
    const Eigen::RowVectorXd mean = m.colwise().mean();
    m.rowwise() -= mean;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double tol = std::max(n, d) * std::numeric_limits<double>::epsilon() * (sv.size() ? sv(0) : 0.0);
    if (sv.size() < k || !(sv(0) > 0.0) || sv(k - 1) <= tol) {
        throw DegenerateInput("centred data has rank below " + std::to_string(k));
    }
    const double total = sv.squaredNorm();
    PcaResult r;
    r.components = torch::empty({k, d}, torch::kFloat64);
    r.mean = torch::empty({d}, torch::kFloat64);
    for (std::int64_t j = 0; j < d; ++j) r.mean[j] = mean(j);
    Eigen::MatrixXd comps(d, k);
    for (int c = 0; c < k; ++c) {
        Eigen::VectorXd v = svd.matrixV().col(c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        comps.col(c) = v;
        r.explained_variance_ratio.push_back(sv(c) * sv(c) / total);
    }
    const Eigen::MatrixXd proj = m * comps;
    r.projection = torch::empty({n, k}, torch::kFloat64);
    auto pa = r.projection.accessor<double, 2>();
    auto ca = r.components.accessor<double, 2>();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) pa[i][c] = proj(i, c);
    }
    for (int c = 0; c < k; ++c) {
        for (std::int64_t j = 0; j < d; ++j) ca[c][j] = comps(j, c);
    }
    return r;
}

std::string pr_curves_svg(const std::vector<NamedCurve>& curves, const std::string& title) {
    constexpr double W = 520, H = 420, L = 60, T = 40, S = 320;
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << L << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << S << "\" height=\"" << S
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        os << "<text x=\"" << L + v * S - 8 << "\" y=\"" << T + S + 16 << "\" font-size=\"10\">" << fmt(v) << "</text>\n";
        os << "<text x=\"" << L - 34 << "\" y=\"" << T + (1 - v) * S + 4 << "\" font-size=\"10\">" << fmt(v)
           << "</text>\n";
    }
    os << "<text x=\"" << L + S / 2 - 20 << "\" y=\"" << T + S + 34 << "\" font-size=\"12\">Recall</text>\n";
    os << "<text x=\"14\" y=\"" << T + S / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << T + S / 2
       << ")\">Precision</text>\n";
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const char* colour = c.dashed ? "black" : palette(i);
        os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\""
           << (c.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
        // Start at recall 0 with the first precision.
        if (!c.points.empty()) os << L << "," << T + (1 - c.points.front().y) * S << " ";
        for (const auto& p : c.points) os << L + p.x * S << "," << T + (1 - p.y) * S << " ";
        os << "\"/>\n";
        const double ly = T + 14 + 16 * static_cast<double>(i);
        os << "<line x1=\"" << L + S + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + S + 28 << "\" y2=\"" << ly - 4
           << "\" stroke=\"" << colour << "\"" << (c.dashed ? " stroke-dasharray=\"4,3\"" : "") << "/>\n";
        os << "<text x=\"" << L + S + 32 << "\" y=\"" << ly << "\" font-size=\"10\">" << xml_escape(c.name)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string pca_scatter_svg(const torch::Tensor& projection, const std::vector<std::string>& groups,
                            const std::string& title) {
    constexpr double W = 520, H = 420, L = 40, T = 40, S = 340;
    if (projection.size(0) != static_cast<std::int64_t>(groups.size()) || projection.size(1) < 2) {
        throw PreconditionError("scatter needs one group per row and two columns");
    }
    const auto p = projection.to(torch::kFloat64).contiguous();
    auto a = p.accessor<double, 2>();
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    for (std::int64_t i = 0; i < p.size(0); ++i) {
        x0 = i ? std::min(x0, a[i][0]) : a[i][0];
        x1 = i ? std::max(x1, a[i][0]) : a[i][0];
        y0 = i ? std::min(y0, a[i][1]) : a[i][1];
        y1 = i ? std::max(y1, a[i][1]) : a[i][1];
    }
    const double sx = x1 > x0 ? S / (x1 - x0) : 1.0, sy = y1 > y0 ? S / (y1 - y0) : 1.0;
    std::vector<std::string> names = groups;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());

    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << L << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << S << "\" height=\"" << S
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (std::int64_t i = 0; i < p.size(0); ++i) {
        const auto g = std::find(names.begin(), names.end(), groups[i]) - names.begin();
        os << "<circle cx=\"" << L + (a[i][0] - x0) * sx << "\" cy=\"" << T + S - (a[i][1] - y0) * sy
           << "\" r=\"2.5\" fill=\"" << palette(g) << "\" fill-opacity=\"0.7\"/>\n";
    }
    for (std::size_t g = 0; g < names.size(); ++g) {
        const double ly = T + 14 + 16 * static_cast<double>(g);
        os << "<circle cx=\"" << L + S + 16 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\"" << palette(g) << "\"/>\n";
        os << "<text x=\"" << L + S + 26 << "\" y=\"" << ly << "\" font-size=\"10\">" << xml_escape(names[g])
           << "</text>\n";
    }
    os << "<text x=\"" << L + S / 2 - 10 << "\" y=\"" << T + S + 20 << "\" font-size=\"12\">PC1</text>\n";
    os << "<text x=\"10\" y=\"" << T + S / 2 << "\" font-size=\"12\">PC2</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string report_markdown_header(const std::vector<std::string>& class_names) {
    std::string head = "| Model | Accuracy (%) | AUROC (%) |";
    std::string rule = "|---|---|---|";
    for (const auto& c : class_names) {
        head += " " + c + " P | " + c + " R | " + c + " F1 |";
        rule += "---|---|---|";
    }
    return head + "\n" + rule + "\n";
}

std::string report_markdown_row(const std::string& label, const AggregateReport& report) {
    std::string row = "| " + label + " | " + fmt_ms(report, "accuracy") + " | " + fmt_ms(report, "auroc") + " |";
    const auto& names = report.models.front().class_names;
    for (const auto& c : names) {
        row += " " + fmt_ms(report, c + ".precision") + " | " + fmt_ms(report, c + ".recall") + " | " +
               fmt_ms(report, c + ".f1") + " |";
    }
    return row + "\n";
}

}  // namespace decay_bench::eval

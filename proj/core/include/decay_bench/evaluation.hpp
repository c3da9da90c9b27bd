#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "decay_bench/embedding_store.hpp"
#include "decay_bench/extraction.hpp"
#include "decay_bench/frame_model.hpp"
#include "decay_bench/manifest.hpp"
#include "decay_bench/temporal.hpp"

namespace decay_bench::eval {

struct Prediction {
    std::string video_id;
    int true_class = 0;
    int predicted_class = 0;
    std::vector<double> probabilities;
    std::string dataset_version;
    manifest::Technique technique = manifest::Technique::real;
    std::string engine = "none";
    std::string identity_id;
};

struct PredictionSet {
    manifest::ClassScheme scheme = manifest::ClassScheme::binary;
    std::vector<Prediction> items;
    /// Videos of the evaluation manifest that could not be scored (no frames).
    std::vector<std::string> unscored;

    int num_classes() const { return manifest::num_classes(scheme); }
    /// Throws PreconditionError on bad vectors or classes.
    void validate() const;
    /// Positive-class ("fake") scores and labels of a binary set.
    std::vector<double> fake_scores() const;
    std::vector<int> fake_labels() const;
    PredictionSet filter_engine(const std::string& engine) const;
    nlohmann::json to_json() const;
    static PredictionSet from_json(const nlohmann::json& j);
};

/// Builds a prediction with predicted class = argmax (first index on ties).
Prediction make_prediction(const manifest::VideoRecord& record, manifest::ClassScheme scheme,
                           std::vector<double> probabilities);

/// Binary reduction: fake score = sum of all non-real class probabilities.
PredictionSet to_binary(const PredictionSet& set);

struct ClassMetrics {
    std::string name;
    double precision = 0.0;  ///< percent
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
    std::int64_t predicted = 0;
    /// No predicted positives: precision reported as 0.
    bool precision_undefined = false;
    /// No true members: recall reported as 0.
    bool recall_undefined = false;
};

struct ConfusionReport {
    std::int64_t n = 0;
    double accuracy = 0.0;  ///< percent
    std::vector<ClassMetrics> per_class;
    /// matrix[true][predicted]
    std::vector<std::vector<std::int64_t>> matrix;

    nlohmann::json to_json() const;
};

/// Throws EmptyInput.
ConfusionReport confusion_metrics(const PredictionSet& set);

/// Probability that a random positive outranks a random negative, ties 1/2,
/// in percent. Throws SingleClassError, PreconditionError on size mismatch.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Macro one-vs-rest AUROC over classes present in the set, percent.
double multiclass_auroc(const PredictionSet& set);

struct CurvePoint {
    double threshold = 0.0;
    double x = 0.0;  ///< recall (PR) or false-positive rate (ROC)
    double y = 0.0;  ///< precision (PR) or true-positive rate (ROC)
};

/// One (recall, precision) point per distinct threshold, descending score.
std::vector<CurvePoint> pr_curve(const std::vector<double>& scores, const std::vector<int>& labels);
/// (fpr, tpr) points per distinct threshold, starting at (0, 0).
std::vector<CurvePoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);
nlohmann::json curve_json(const std::vector<CurvePoint>& curve);

struct EvaluationReport {
    manifest::ClassScheme scheme = manifest::ClassScheme::binary;
    std::vector<std::string> class_names;
    ConfusionReport confusion;
    double auroc = 0.0;  ///< percent; NaN when a class is missing
    std::vector<CurvePoint> pr;
    std::vector<CurvePoint> roc;
    std::vector<std::string> warnings;
    nlohmann::json provenance = nlohmann::json::object();

    nlohmann::json to_json() const;
    /// Flat name -> value map of every scalar (used for aggregation).
    std::map<std::string, double> scalars() const;
};

/// Confusion metrics, AUROC and (for binary sets) PR/ROC curves.
EvaluationReport evaluate_predictions(const PredictionSet& set);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  ///< population standard deviation
    std::vector<double> values;
};

struct AggregateReport {
    std::string basis;
    std::vector<EvaluationReport> models;
    std::map<std::string, MeanStd> scalars;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

AggregateReport aggregate_reports(std::vector<EvaluationReport> reports, std::string basis);

/// Video-level predictions of a frame model: mean of per-frame softmax.
/// Videos without frames in the index are listed as unscored.
PredictionSet predict_frame_model(frame::FrameModel& model, const extraction::FrameIndex& index,
                                  const manifest::DatasetManifest& manifest);
/// Video-level predictions of a temporal model over stored embeddings.
PredictionSet predict_temporal_model(temporal::TemporalModel& model, const frame::EmbeddingStore& store,
                                     const manifest::DatasetManifest& manifest);

/// Binary evaluation of one or more models' predictions on another dataset
/// version; a set of models is summarised as mean +/- std. A version equal to
/// one in `training_versions` adds a same-version warning.
AggregateReport cross_evaluate(const std::vector<PredictionSet>& per_model, const std::string& test_version,
                               const std::vector<std::string>& training_versions);

struct PcaResult {
    torch::Tensor projection;  ///< N x k float64
    torch::Tensor components;  ///< k x D float64, unit rows
    torch::Tensor mean;        ///< D float64
    std::vector<double> explained_variance_ratio;
};

/// PCA of N x D rows. Sign convention: the largest-magnitude loading of each
/// component is positive. Throws DegenerateInput when N <= k, D < k or the
/// centred rank is below k.
PcaResult pca_features(const torch::Tensor& data, int components = 2);

struct NamedCurve {
    std::string name;
    std::vector<CurvePoint> points;
    bool dashed = false;
};

/// Static SVG renderings; the style is not contractual.
std::string pr_curves_svg(const std::vector<NamedCurve>& curves, const std::string& title);
std::string pca_scatter_svg(const torch::Tensor& projection, const std::vector<std::string>& groups,
                            const std::string& title);

/// Markdown table of accuracy, AUROC and per-class P/R/F1.
std::string report_markdown_row(const std::string& label, const AggregateReport& report);
std::string report_markdown_header(const std::vector<std::string>& class_names);

}  // namespace decay_bench::eval

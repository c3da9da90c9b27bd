#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace decay_bench::manifest {

enum class Label { real, fake };
enum class Technique { real, face_swap, lip_sync, avatar };
enum class Split { train, test };
enum class ClassScheme { binary, multiclass };

std::string_view to_string(Label v);
std::string_view to_string(Technique v);
std::string_view to_string(Split v);
std::string_view to_string(ClassScheme v);
Label parse_label(std::string_view s);
Technique parse_technique(std::string_view s);
Split parse_split(std::string_view s);
ClassScheme parse_class_scheme(std::string_view s);

/// Number of output classes for a scheme: 2 (real, fake) or 4 (real and the
/// three fake techniques).
int num_classes(ClassScheme scheme);
std::vector<std::string> class_names(ClassScheme scheme);

struct VideoRecord {
    std::string video_id;
    std::filesystem::path path;
    Label label = Label::real;
    Technique technique = Technique::real;
    std::string engine = "none";
    std::string identity_id;
    std::string dataset_version;
    Split split = Split::train;

    /// Class index of this record under the given scheme.
    int class_id(ClassScheme scheme) const;

    bool operator==(const VideoRecord&) const = default;
};

/// Validates the per-record invariants; throws IntegrityError naming the video.
void validate_record(const VideoRecord& record);

using IdentitySet = std::set<std::string>;

class DatasetManifest {
public:
    DatasetManifest() = default;
    /// Validates every record plus uniqueness and identity/partition
    /// exclusivity; throws IntegrityError on violation.
    DatasetManifest(std::vector<VideoRecord> records, std::string version, ClassScheme scheme);

    const std::vector<VideoRecord>& records() const { return records_; }
    const std::string& version() const { return version_; }
    ClassScheme class_scheme() const { return scheme_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    IdentitySet identities() const;
    /// Records restricted to one partition (train or test).
    DatasetManifest partition(Split split) const;
    /// Records whose identity is in `ids`, in original order.
    DatasetManifest restrict_to(const IdentitySet& ids) const;
    DatasetManifest with_scheme(ClassScheme scheme) const;

    const VideoRecord* find(std::string_view video_id) const;
    std::map<std::string, std::size_t> videos_per_identity() const;

    /// Content hash of the record set, version and scheme.
    std::string hash() const;

    nlohmann::json to_json() const;
    std::string to_csv() const;

private:
    std::vector<VideoRecord> records_;
    std::string version_;
    ClassScheme scheme_ = ClassScheme::binary;
};

/// Loads a CSV manifest (header
/// `video_id,path,label,technique,engine,identity_id,dataset_version,split`)
/// or its JSON mirror (chosen by a `.json` extension). Relative video paths
/// resolve against the manifest's directory. Throws ParseError or
/// IntegrityError.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              std::optional<ClassScheme> scheme = std::nullopt);

DatasetManifest parse_manifest_csv(std::string_view text, const std::filesystem::path& base_dir,
                                   ClassScheme scheme = ClassScheme::binary);
DatasetManifest parse_manifest_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                    std::optional<ClassScheme> scheme = std::nullopt);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct IdentitySplit {
    IdentitySet train_identities;
    IdentitySet held_identities;
    std::uint64_t seed = 0;
};

/// Splits the identities of the manifest's train partition into a training
/// list and a held-out validation list of round(val_fraction * n) identities
/// (clamped to [1, n-1]). Throws TooFewIdentities when n < 2.
IdentitySplit split_identities(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

/// All videos of round(fraction * n) uniformly chosen identities (min 1).
DatasetManifest subset_by_identity_fraction(const DatasetManifest& manifest, double fraction,
                                            std::uint64_t seed);

/// k identity-disjoint folds over the train partition; held sets partition
/// the identities with sizes differing by at most one.
std::vector<IdentitySplit> kfold_identity_splits(const DatasetManifest& manifest, int k, std::uint64_t seed);

/// Throws IdentityLeakError if the two manifests share an identity.
void require_identity_disjoint(const DatasetManifest& a, const DatasetManifest& b, std::string_view context);

/// Builds a manifest by walking `<root>/<split>/<real|face_swap|lip_sync|avatar>/<engine>/<identity>/*.{mp4,avi,mkv,mov,webm}`
/// (`real` has no engine level).
DatasetManifest scan_directory(const std::filesystem::path& root, const std::string& version);

}  // namespace decay_bench::manifest

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace decay_bench {

/// Base class for every failure the framework reports. `kind()` is the stable
/// machine-readable name used in CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define DECAY_BENCH_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    }

DECAY_BENCH_DEFINE_ERROR(ParseError);
DECAY_BENCH_DEFINE_ERROR(IntegrityError);
DECAY_BENCH_DEFINE_ERROR(TooFewIdentities);
DECAY_BENCH_DEFINE_ERROR(DecodeError);
DECAY_BENCH_DEFINE_ERROR(NoFacesError);
DECAY_BENCH_DEFINE_ERROR(IncompatibleCheckpoint);
DECAY_BENCH_DEFINE_ERROR(IdentityLeakError);
DECAY_BENCH_DEFINE_ERROR(EmptyDataset);
DECAY_BENCH_DEFINE_ERROR(AssetMissing);
DECAY_BENCH_DEFINE_ERROR(MissingEmbeddings);
DECAY_BENCH_DEFINE_ERROR(EmptyInput);
DECAY_BENCH_DEFINE_ERROR(SingleClassError);
DECAY_BENCH_DEFINE_ERROR(DegenerateInput);
DECAY_BENCH_DEFINE_ERROR(MissingUpstream);
DECAY_BENCH_DEFINE_ERROR(ConfigError);
DECAY_BENCH_DEFINE_ERROR(TrainingDiverged);
DECAY_BENCH_DEFINE_ERROR(PreconditionError);

#undef DECAY_BENCH_DEFINE_ERROR

}  // namespace decay_bench

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "retforge/matrix.hpp"
#include "retforge/tape.hpp"

namespace retforge::model {

enum class ModelKind : std::uint32_t { fcrr = 1, convrr = 2, composite = 3 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

// Fully connected residual branch: n_layers dense layers, ReLU + dropout after
// every hidden layer, last layer linear.
struct FcrrConfig {
    std::size_t input_dim = 1024;
    std::size_t n_layers = 2;
    std::size_t hidden_dim = 1024;
    float dropout = 0.1f;
    float scaling_factor = 1.0f;

    bool operator==(const FcrrConfig&) const = default;
};

// Convolutional residual branch: the input vector is read as a one-channel
// sequence, convolved with n_filters kernels ("same" zero padding), averaged
// over positions, then dropout. n_filters must equal input_dim.
struct ConvRrConfig {
    std::size_t input_dim = 1024;
    std::size_t n_filters = 1024;
    std::size_t kernel_len = 5;
    std::size_t stride = 2;
    float dropout = 0.1f;
    float scaling_factor = 1.0f;

    bool operator==(const ConvRrConfig&) const = default;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct InitOptions {
    // Zero the weights that produce each residual branch's output, so an
    // untrained model is the identity on unit-norm input. When false every
    // weight is Glorot-uniform.
    bool zero_branch_output = true;
};

// FCRR, ConvRR or FCRR followed by ConvRR. Every block computes
// normalize_rows(sf * x + f(x)).
class RetrievalModel {
public:
    RetrievalModel(ModelKind kind, std::optional<FcrrConfig> fcrr, std::optional<ConvRrConfig> conv);

    // Copies and moves carry parameters and config but never the recorded
    // tape, which is bound to the source object.
    RetrievalModel(const RetrievalModel& other);
    RetrievalModel& operator=(const RetrievalModel& other);
    RetrievalModel(RetrievalModel&& other) noexcept;
    RetrievalModel& operator=(RetrievalModel&& other) noexcept;

    ModelKind kind() const noexcept { return kind_; }
    const std::optional<FcrrConfig>& fcrr_config() const noexcept { return fcrr_; }
    const std::optional<ConvRrConfig>& conv_config() const noexcept { return conv_; }
    std::size_t dim() const noexcept;

    std::vector<NamedParam>& params() noexcept { return params_; }
    const std::vector<NamedParam>& params() const noexcept { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    std::size_t parameter_count() const noexcept;

    // Records the computation for backward() when training is true; dropout is
    // active only then and its masks derive from seed.
    Matrix forward(const Matrix& x, bool training, std::uint64_t seed = 0);
    // Inference over many rows, chunked to bound memory.
    Matrix infer(const Matrix& x, std::size_t chunk_rows = 1024);

    // Accumulates parameter gradients and returns the gradient wrt the input
    // of the last training forward. Throws StateError otherwise.
    Matrix backward(const Matrix& upstream);
    void zero_grad();

    const std::vector<Matrix>& dropout_masks() const noexcept { return tape_.dropout_masks(); }
    bool has_recorded_forward() const noexcept { return recorded_; }

    // Parameter-and-config equality.
    bool same_parameters(const RetrievalModel& other) const;

    // Copy without the recorded tape.
    RetrievalModel snapshot() const;

private:
    friend RetrievalModel init_params(ModelKind, std::optional<FcrrConfig>, std::optional<ConvRrConfig>,
                                      std::uint64_t, InitOptions);
    Tape::Var fcrr_block(Tape::Var x, bool training, std::uint64_t seed, const std::string& prefix);
    Tape::Var conv_block(Tape::Var x, bool training, std::uint64_t seed, const std::string& prefix);

    ModelKind kind_;
    std::optional<FcrrConfig> fcrr_;
    std::optional<ConvRrConfig> conv_;
    std::vector<NamedParam> params_;
    Tape tape_;
    Tape::Var input_var_ = 0;
    Tape::Var output_var_ = 0;
    bool recorded_ = false;
};

void validate_config(const FcrrConfig& c);
void validate_config(const ConvRrConfig& c);

// Deterministic per seed. Weights ~ U(-sqrt(6/(fan_in+fan_out)), +...), biases 0.
RetrievalModel init_params(ModelKind kind, std::optional<FcrrConfig> fcrr, std::optional<ConvRrConfig> conv,
                           std::uint64_t seed, InitOptions options = {});

// Checkpoint layout (little-endian):
//   "RRM1", u32 kind,
//   fcrr block (if present):  u64 input_dim, n_layers, hidden_dim; f32 dropout, sf
//   convrr block (if present): u64 input_dim, n_filters, kernel_len, stride; f32 dropout, sf
//   u32 n_params, then per param: u32 name_len, name, u32 ndim, u64 dims[ndim], f32 values
void save_checkpoint(const RetrievalModel& model, const std::filesystem::path& path);
RetrievalModel load_checkpoint(const std::filesystem::path& path,
                               std::optional<ModelKind> expected_kind = std::nullopt);

}  // namespace retforge::model

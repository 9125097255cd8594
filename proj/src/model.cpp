#include "retforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "retforge/error.hpp"
#include "retforge/rng.hpp"

namespace retforge::model {

namespace {

constexpr char kMagic[4] = {'R', 'R', 'M', '1'};

void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (float& v : t.values) v = static_cast<float>(rng.uniform(-bound, bound));
}

class Writer {
public:
    explicit Writer(std::ofstream& out) : out_(out) {}
    template <typename T>
    void put(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

private:
    std::ofstream& out_;
};

class Reader {
public:
    Reader(std::vector<char> buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}
    template <typename T>
    T get() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    void bytes(void* p, std::size_t n) {
        if (n > buf_.size() - pos_) throw FormatError(path_ + ": truncated checkpoint");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const noexcept { return pos_ == buf_.size(); }

private:
    std::vector<char> buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::fcrr: return "fcrr";
        case ModelKind::convrr: return "convrr";
        case ModelKind::composite: return "composite";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "fcrr") return ModelKind::fcrr;
    if (s == "convrr") return ModelKind::convrr;
    if (s == "composite") return ModelKind::composite;
    throw ArgumentError("unknown model kind '" + s + "' (expected fcrr, convrr or composite)");
}

void validate_config(const FcrrConfig& c) {
    if (c.input_dim == 0) throw ArgumentError("fcrr: input_dim must be >= 1");
    if (c.n_layers == 0) throw ArgumentError("fcrr: n_layers must be >= 1");
    if (c.hidden_dim == 0) throw ArgumentError("fcrr: hidden_dim must be >= 1");
    if (!(c.dropout >= 0.0f && c.dropout < 1.0f)) throw ArgumentError("fcrr: dropout must lie in [0, 1)");
}

void validate_config(const ConvRrConfig& c) {
    if (c.input_dim == 0) throw ArgumentError("convrr: input_dim must be >= 1");
    if (c.kernel_len == 0) throw ArgumentError("convrr: kernel_len must be >= 1");
    if (c.stride == 0) throw ArgumentError("convrr: stride must be >= 1");
    if (c.n_filters == 0) throw ArgumentError("convrr: n_filters must be >= 1");
    if (c.n_filters != c.input_dim) {
        throw ArgumentError("convrr: n_filters (" + std::to_string(c.n_filters) + ") must equal input_dim (" +
                            std::to_string(c.input_dim) + ") for the residual add");
    }
    if (!(c.dropout >= 0.0f && c.dropout < 1.0f)) throw ArgumentError("convrr: dropout must lie in [0, 1)");
}

RetrievalModel::RetrievalModel(ModelKind kind, std::optional<FcrrConfig> fcrr, std::optional<ConvRrConfig> conv)
    : kind_(kind), fcrr_(std::move(fcrr)), conv_(std::move(conv)) {
    const bool wants_fcrr = kind != ModelKind::convrr;
    const bool wants_conv = kind != ModelKind::fcrr;
    if (wants_fcrr != fcrr_.has_value() || wants_conv != conv_.has_value()) {
        throw ArgumentError("model kind " + to_string(kind) + " does not match the supplied configs");
    }
    if (fcrr_) validate_config(*fcrr_);
    if (conv_) validate_config(*conv_);
    if (fcrr_ && conv_ && fcrr_->input_dim != conv_->input_dim) {
        throw ArgumentError("composite: fcrr and convrr input dims differ");
    }
    if (fcrr_) {
        const auto& c = *fcrr_;
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const std::size_t in = l == 0 ? c.input_dim : c.hidden_dim;
            const std::size_t out = l + 1 == c.n_layers ? c.input_dim : c.hidden_dim;
            params_.push_back({"fcrr.dense" + std::to_string(l) + ".weight", Tensor({out, in})});
            params_.push_back({"fcrr.dense" + std::to_string(l) + ".bias", Tensor({out})});
        }
    }
    if (conv_) {
        params_.push_back({"convrr.conv.weight", Tensor({conv_->n_filters, conv_->kernel_len})});
        params_.push_back({"convrr.conv.bias", Tensor({conv_->n_filters})});
    }
}

RetrievalModel::RetrievalModel(const RetrievalModel& other)
    : kind_(other.kind_), fcrr_(other.fcrr_), conv_(other.conv_), params_(other.params_) {}

RetrievalModel& RetrievalModel::operator=(const RetrievalModel& other) {
    if (this == &other) return *this;
    tape_.clear();
    recorded_ = false;
    kind_ = other.kind_;
    fcrr_ = other.fcrr_;
    conv_ = other.conv_;
    params_ = other.params_;
    return *this;
}

RetrievalModel::RetrievalModel(RetrievalModel&& other) noexcept
    : kind_(other.kind_),
      fcrr_(std::move(other.fcrr_)),
      conv_(std::move(other.conv_)),
      params_(std::move(other.params_)) {
    other.tape_.clear();
    other.recorded_ = false;
}

RetrievalModel& RetrievalModel::operator=(RetrievalModel&& other) noexcept {
    if (this == &other) return *this;
    tape_.clear();
    recorded_ = false;
    kind_ = other.kind_;
    fcrr_ = std::move(other.fcrr_);
    conv_ = std::move(other.conv_);
    params_ = std::move(other.params_);
    other.tape_.clear();
    other.recorded_ = false;
    return *this;
}

std::size_t RetrievalModel::dim() const noexcept { return fcrr_ ? fcrr_->input_dim : conv_->input_dim; }

Tensor& RetrievalModel::param(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p.tensor;
    }
    throw LookupError("no parameter named '" + name + "'");
}

const Tensor& RetrievalModel::param(const std::string& name) const {
    return const_cast<RetrievalModel*>(this)->param(name);
}

std::size_t RetrievalModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.count();
    return n;
}

Tape::Var RetrievalModel::fcrr_block(Tape::Var x, bool training, std::uint64_t seed, const std::string& prefix) {
    const auto& c = *fcrr_;
    Tape::Var h = x;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string base = prefix + "dense" + std::to_string(l);
        const Tape::Var w = tape_.parameter(param(base + ".weight"));
        const Tape::Var b = tape_.parameter(param(base + ".bias"));
        h = tape_.linear(h, w, b);
        if (l + 1 < c.n_layers) {
            h = tape_.relu(h);
            if (training && c.dropout > 0.0f) h = tape_.dropout(h, c.dropout, derive_seed(seed, 1, l));
        }
    }
    const Tape::Var skip = tape_.scale(x, c.scaling_factor);
    return tape_.l2_normalize_rows(tape_.add(skip, h));
}

Tape::Var RetrievalModel::conv_block(Tape::Var x, bool training, std::uint64_t seed, const std::string& prefix) {
    const auto& c = *conv_;
    const Tape::Var w = tape_.parameter(param(prefix + "conv.weight"));
    const Tape::Var b = tape_.parameter(param(prefix + "conv.bias"));
    Tape::Var h = tape_.conv1d_global_avg(x, w, b, c.stride);
    if (training && c.dropout > 0.0f) h = tape_.dropout(h, c.dropout, derive_seed(seed, 2, 0));
    const Tape::Var skip = tape_.scale(x, c.scaling_factor);
    return tape_.l2_normalize_rows(tape_.add(skip, h));
}

Matrix RetrievalModel::forward(const Matrix& x, bool training, std::uint64_t seed) {
    if (x.rows() == 0) throw ArgumentError("forward: empty batch");
    if (x.cols() != dim()) {
        throw ArgumentError("forward: input dim " + std::to_string(x.cols()) + " != model dim " +
                            std::to_string(dim()));
    }
    tape_.clear();
    recorded_ = false;
    input_var_ = tape_.input(x);
    Tape::Var h = input_var_;
    if (fcrr_) h = fcrr_block(h, training, seed, "fcrr.");
    if (conv_) h = conv_block(h, training, seed, "convrr.");
    output_var_ = h;
    Matrix out = tape_.value(output_var_);
    if (training) {
        recorded_ = true;
    } else {
        tape_.clear();
    }
    return out;
}

Matrix RetrievalModel::infer(const Matrix& x, std::size_t chunk_rows) {
    if (x.rows() <= chunk_rows) return forward(x, false);
    Matrix out(x.rows(), x.cols());
    std::vector<std::size_t> rows;
    for (std::size_t begin = 0; begin < x.rows(); begin += chunk_rows) {
        const std::size_t end = std::min(x.rows(), begin + chunk_rows);
        rows.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) rows[i - begin] = i;
        const Matrix part = forward(x.gather_rows(rows), false);
        std::copy(part.data().begin(), part.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()));
    }
    return out;
}

Matrix RetrievalModel::backward(const Matrix& upstream) {
    if (!recorded_) throw StateError("backward called without a recorded training forward pass");
    tape_.backward(output_var_, upstream);
    const Matrix& g = tape_.grad(input_var_);
    return g.empty() ? Matrix(upstream.rows(), upstream.cols()) : g;
}

void RetrievalModel::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

bool RetrievalModel::same_parameters(const RetrievalModel& other) const {
    if (kind_ != other.kind_ || fcrr_ != other.fcrr_ || conv_ != other.conv_) return false;
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != other.params_[i].name || !(params_[i].tensor == other.params_[i].tensor)) return false;
    }
    return true;
}

RetrievalModel RetrievalModel::snapshot() const { return RetrievalModel(*this); }

RetrievalModel init_params(ModelKind kind, std::optional<FcrrConfig> fcrr, std::optional<ConvRrConfig> conv,
                           std::uint64_t seed, InitOptions options) {
    RetrievalModel m(kind, std::move(fcrr), std::move(conv));
    Rng rng(seed);
    if (m.fcrr_) {
        const auto& c = *m.fcrr_;
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            Tensor& w = m.param("fcrr.dense" + std::to_string(l) + ".weight");
            const bool branch_output = l + 1 == c.n_layers;
            if (branch_output && options.zero_branch_output) continue;
            glorot_fill(w, w.shape[1], w.shape[0], rng);
        }
    }
    if (m.conv_ && !options.zero_branch_output) {
        Tensor& w = m.param("convrr.conv.weight");
        const std::size_t k = m.conv_->kernel_len;
        glorot_fill(w, k, k * m.conv_->n_filters, rng);
    }
    return m;
}

void save_checkpoint(const RetrievalModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    Writer w(out);
    w.bytes(kMagic, 4);
    w.put(static_cast<std::uint32_t>(model.kind()));
    if (const auto& c = model.fcrr_config()) {
        w.put<std::uint64_t>(c->input_dim);
        w.put<std::uint64_t>(c->n_layers);
        w.put<std::uint64_t>(c->hidden_dim);
        w.put<float>(c->dropout);
        w.put<float>(c->scaling_factor);
    }
    if (const auto& c = model.conv_config()) {
        w.put<std::uint64_t>(c->input_dim);
        w.put<std::uint64_t>(c->n_filters);
        w.put<std::uint64_t>(c->kernel_len);
        w.put<std::uint64_t>(c->stride);
        w.put<float>(c->dropout);
        w.put<float>(c->scaling_factor);
    }
    w.put(static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        w.put(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.put(static_cast<std::uint32_t>(p.tensor.shape.size()));
        for (const std::size_t d : p.tensor.shape) w.put<std::uint64_t>(d);
        w.bytes(p.tensor.values.data(), p.tensor.values.size() * sizeof(float));
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

RetrievalModel load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(buf), path.string());

    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic, expected RRM1");
    const auto raw_kind = r.get<std::uint32_t>();
    if (raw_kind < 1 || raw_kind > 3) throw FormatError(path.string() + ": unknown model kind tag");
    const auto kind = static_cast<ModelKind>(raw_kind);
    if (expected_kind && *expected_kind != kind) {
        throw FormatError(path.string() + ": checkpoint holds a " + to_string(kind) + " model, expected " +
                          to_string(*expected_kind));
    }
    std::optional<FcrrConfig> fcrr;
    std::optional<ConvRrConfig> conv;
    if (kind != ModelKind::convrr) {
        FcrrConfig c;
        c.input_dim = r.get<std::uint64_t>();
        c.n_layers = r.get<std::uint64_t>();
        c.hidden_dim = r.get<std::uint64_t>();
        c.dropout = r.get<float>();
        c.scaling_factor = r.get<float>();
        fcrr = c;
    }
    if (kind != ModelKind::fcrr) {
        ConvRrConfig c;
        c.input_dim = r.get<std::uint64_t>();
        c.n_filters = r.get<std::uint64_t>();
        c.kernel_len = r.get<std::uint64_t>();
        c.stride = r.get<std::uint64_t>();
        c.dropout = r.get<float>();
        c.scaling_factor = r.get<float>();
        conv = c;
    }
    RetrievalModel m = [&] {
        try {
            return RetrievalModel(kind, fcrr, conv);
        } catch (const ArgumentError& e) {
            throw FormatError(path.string() + ": invalid config: " + e.what());
        }
    }();
    const auto n_params = r.get<std::uint32_t>();
    if (n_params != m.params().size()) throw FormatError(path.string() + ": parameter count mismatch");
    for (auto& p : m.params()) {
        const auto name_len = r.get<std::uint32_t>();
        if (name_len > 4096) throw FormatError(path.string() + ": implausible parameter name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        if (name != p.name) throw FormatError(path.string() + ": expected parameter '" + p.name + "', got '" + name + "'");
        const auto ndim = r.get<std::uint32_t>();
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        if (shape != p.tensor.shape) throw FormatError(path.string() + ": shape mismatch for '" + name + "'");
        r.bytes(p.tensor.values.data(), p.tensor.values.size() * sizeof(float));
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after parameters");
    return m;
}

}  // namespace retforge::model

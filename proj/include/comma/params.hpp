#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "comma/nn_ops.hpp"

namespace comma {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and volume formats are little-endian");

struct InitSpec {
    enum Kind { kZeros, kConstant, kFanInUniform, kExplicit } kind = kZeros;
    double value = 0.0;       // kConstant
    std::int64_t fan_in = 1;  // kFanInUniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in))

    static InitSpec zeros() { return {kZeros, 0.0, 1}; }
    static InitSpec constant(double v) { return {kConstant, v, 1}; }
    static InitSpec fan_in_uniform(std::int64_t fan_in) { return {kFanInUniform, 0.0, fan_in}; }
    static InitSpec explicit_values() { return {kExplicit, 0.0, 1}; }

    std::string describe() const {
        switch (kind) {
            case kZeros: return "zeros";
            case kConstant: return strcat_msg("constant(", value, ")");
            case kFanInUniform: return strcat_msg("fan_in_uniform(", fan_in, ")");
            case kExplicit: return "explicit";
        }
        return "?";
    }
};

template <class T>
struct Parameter {
    std::string name;  // dotted path, unique within a model
    Tensor<T> tensor;
    InitSpec init_spec;
};

// Owns every trainable tensor of a model. Parameters are registered in a
// fixed construction order, which also fixes the init RNG stream and the
// checkpoint layout.
template <class T>
class ParamRegistry {
public:
    explicit ParamRegistry(std::uint64_t init_seed) : rng_(init_seed) {}

    Tensor<T> create(const std::string& name, Shape shape, InitSpec spec) {
        check(!index_.count(name), strcat_msg("duplicate parameter name: ", name));
        Tensor<T> t = Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
        switch (spec.kind) {
            case InitSpec::kZeros: break;
            case InitSpec::kConstant:
                for (auto& v : t.node()->data) v = static_cast<T>(spec.value);
                break;
            case InitSpec::kFanInUniform: {
                double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
                for (auto& v : t.node()->data) v = static_cast<T>(rng_.uniform(-bound, bound));
                break;
            }
            case InitSpec::kExplicit: break;  // caller fills data afterwards
        }
        index_[name] = params_.size();
        params_.push_back({name, t, spec});
        return t;
    }

    Rng& rng() { return rng_; }

    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }

    const Parameter<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        check(it != index_.end(), strcat_msg("unknown parameter: ", name));
        return params_[it->second];
    }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.node()->grad.clear();
    }

private:
    Rng rng_;
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint file: magic "CKPT0001", u32-LE parameter count, then for each
// parameter u32 name length, UTF-8 name, u32 ndim, u32 extents, raw 32-bit
// IEEE-754 little-endian values.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error(strcat_msg("checkpoint: truncated while reading ", what));
    return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& reg) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(strcat_msg("cannot open checkpoint for writing: ", path));
    os.write("CKPT0001", 8);
    detail::write_u32(os, static_cast<std::uint32_t>(reg.params().size()));
    for (const auto& p : reg.params()) {
        detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(p.tensor.ndim()));
        for (auto e : p.tensor.shape()) detail::write_u32(os, static_cast<std::uint32_t>(e));
        if constexpr (std::is_same_v<T, float>) {
            os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                     static_cast<std::streamsize>(sizeof(float) * p.tensor.size()));
        } else {
            std::vector<float> buf(p.tensor.data().begin(), p.tensor.data().end());
            os.write(reinterpret_cast<const char*>(buf.data()),
                     static_cast<std::streamsize>(sizeof(float) * buf.size()));
        }
    }
    if (!os) throw std::runtime_error(strcat_msg("checkpoint write failed: ", path));
}

template <class T>
void load_checkpoint(const std::string& path, ParamRegistry<T>& reg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error(strcat_msg("cannot open checkpoint: ", path));
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "CKPT0001")
        throw std::runtime_error(strcat_msg("bad checkpoint magic in ", path));
    std::uint32_t count = detail::read_u32(is, "parameter count");
    std::size_t loaded = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = detail::read_u32(is, "name length");
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        std::uint32_t ndim = detail::read_u32(is, strcat_msg("ndim of ", name));
        Shape shape(ndim);
        for (auto& e : shape)
            e = static_cast<std::int64_t>(detail::read_u32(is, strcat_msg("extent of ", name)));
        std::vector<float> buf(static_cast<std::size_t>(numel(shape)));
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(sizeof(float) * buf.size()));
        if (!is) throw std::runtime_error(strcat_msg("checkpoint: truncated data for ", name));
        const auto& p = reg.at(name);
        check(p.tensor.shape() == shape,
              strcat_msg("checkpoint shape mismatch for ", name, ": file ", shape_str(shape),
                         " vs model ", shape_str(p.tensor.shape())));
        auto dst = const_cast<Parameter<T>&>(p).tensor.mutable_data();
        for (std::size_t k = 0; k < buf.size(); ++k) dst[k] = static_cast<T>(buf[k]);
        ++loaded;
    }
    check(loaded == reg.params().size(),
          strcat_msg("checkpoint holds ", loaded, " parameters, model expects ",
                     reg.params().size()));
}

// ---------------------------------------------------------------------------
// SGD with momentum and polynomial LR decay
// ---------------------------------------------------------------------------

template <class T>
class SgdOptimizer {
public:
    SgdOptimizer(ParamRegistry<T>& reg, double lr, double momentum)
        : reg_(reg), base_lr_(lr), momentum_(momentum) {
        velocity_.resize(reg.params().size());
        for (std::size_t i = 0; i < velocity_.size(); ++i)
            velocity_[i].assign(static_cast<std::size_t>(reg.params()[i].tensor.size()), T(0));
    }

    // nnU-Net style schedule: lr = base * (1 - iter/max_iter)^0.9
    double lr_at(std::int64_t iter, std::int64_t max_iter) const {
        double f = 1.0 - static_cast<double>(iter) / static_cast<double>(std::max<std::int64_t>(
                                                         1, max_iter));
        return base_lr_ * std::pow(std::max(f, 0.0), 0.9);
    }

    void step(double lr) {
        auto& ps = reg_.params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto& node = *ps[i].tensor.node();
            if (node.grad.size() != node.data.size()) continue;  // unused this iteration
            auto& vel = velocity_[i];
            T mu = static_cast<T>(momentum_);
            T step_lr = static_cast<T>(lr);
            for (std::size_t k = 0; k < vel.size(); ++k) {
                vel[k] = mu * vel[k] + node.grad[k];
                node.data[k] -= step_lr * vel[k];
            }
        }
    }

private:
    ParamRegistry<T>& reg_;
    double base_lr_;
    double momentum_;
    std::vector<std::vector<T>> velocity_;
};

// ---------------------------------------------------------------------------
// Small layer wrappers
// ---------------------------------------------------------------------------

template <class T>
struct Linear {
    Tensor<T> weight;  // [In, Out]
    Tensor<T> bias;    // [Out], optional

    static Linear make(ParamRegistry<T>& reg, const std::string& name, std::int64_t in,
                       std::int64_t out, bool with_bias = true) {
        Linear l;
        l.weight = reg.create(name + ".weight", {in, out}, InitSpec::fan_in_uniform(in));
        if (with_bias) l.bias = reg.create(name + ".bias", {out}, InitSpec::zeros());
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto y = matmul(x, weight);
        if (bias.defined()) y = add_rowvec(y, bias);
        return y;
    }
};

template <class T>
struct Conv3dLayer {
    Tensor<T> weight;  // [Co, Ci, k, k, k]
    Tensor<T> bias;    // [Co]
    std::array<std::int64_t, 3> stride{1, 1, 1};
    std::int64_t padding = 0;

    static Conv3dLayer make(ParamRegistry<T>& reg, const std::string& name, std::int64_t ci,
                            std::int64_t co, std::int64_t k,
                            std::array<std::int64_t, 3> stride = {1, 1, 1},
                            std::int64_t padding = -1) {
        Conv3dLayer l;
        l.stride = stride;
        l.padding = padding < 0 ? k / 2 : padding;
        l.weight = reg.create(name + ".weight", {co, ci, k, k, k},
                              InitSpec::fan_in_uniform(ci * k * k * k));
        l.bias = reg.create(name + ".bias", {co}, InitSpec::zeros());
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto y = conv3d(x, weight, stride, padding);
        return add_channel_vec(y, bias);
    }
};

template <class T>
struct InstanceNormLayer {
    Tensor<T> gamma, beta;  // [C]
    T eps = T(1e-5);

    static InstanceNormLayer make(ParamRegistry<T>& reg, const std::string& name,
                                  std::int64_t ch) {
        InstanceNormLayer l;
        l.gamma = reg.create(name + ".gamma", {ch}, InitSpec::constant(1.0));
        l.beta = reg.create(name + ".beta", {ch}, InitSpec::zeros());
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return add_channel_vec(mul_channel_vec(instance_norm(x, eps), gamma), beta);
    }
};

template <class T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;  // [T]
    T eps = T(1e-5);

    static LayerNormLayer make(ParamRegistry<T>& reg, const std::string& name, std::int64_t dim) {
        LayerNormLayer l;
        l.gamma = reg.create(name + ".gamma", {dim}, InitSpec::constant(1.0));
        l.beta = reg.create(name + ".beta", {dim}, InitSpec::zeros());
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return add_rowvec(mul_rowvec(layer_norm(x, eps), gamma), beta);
    }
};

}  // namespace comma

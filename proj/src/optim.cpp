#include "tog/optim.hpp"

#include <cmath>

#include "tog/checkpoint.hpp"
#include "tog/errors.hpp"

namespace tog {

Tensor Params::add(const std::string& name, Tensor t) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    t.requires_grad = true;
    t.ensure_grad();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
}

const Tensor* Params::find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return &tensors_[i];
    return nullptr;
}

Tensor* Params::find(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return &tensors_[i];
    return nullptr;
}

void Params::zero_grad() {
    for (Tensor& t : tensors_) t.zero_grad();
}

std::size_t Params::total_elements() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.numel();
    return n;
}

Adam::Adam(AdamConfig cfg, std::set<std::string> frozen)
    : cfg_(cfg), frozen_(std::move(frozen)) {}

void Adam::step(Params& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params.tensor(i).numel(), 0.0f);
            v_[i].assign(params.tensor(i).numel(), 0.0f);
        }
    }
    if (m_.size() != params.size()) throw ConfigError("adam state does not match parameter set");

    ++t_;
    const float c1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg_.beta1), t_));
    const float c2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg_.beta2), t_));

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (frozen_.count(params.name(i))) continue;
        Tensor& p = params.tensor(i);
        const float* g = p.grad_ptr();
        float* w = p.ptr();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const std::size_t n = p.numel();
        for (std::size_t k = 0; k < n; ++k) {
            if (!std::isfinite(g[k])) {
                throw TrainingError("non-finite gradient in parameter '" + params.name(i) + "'");
            }
            if (cfg_.weight_decay > 0.0f) w[k] -= cfg_.lr * cfg_.weight_decay * w[k];
            m[k] = cfg_.beta1 * m[k] + (1.0f - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0f - cfg_.beta2) * g[k] * g[k];
            const float mhat = m[k] / c1;
            const float vhat = v[k] / c2;
            w[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::dump(const std::string& base, const Params& params) const {
    Params state;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape& shp = params.tensor(i).shape;
        state.add("adam.m." + params.name(i),
                  m_.empty() ? Tensor::zeros(shp) : Tensor::from(shp, m_[i]));
        state.add("adam.v." + params.name(i),
                  v_.empty() ? Tensor::zeros(shp) : Tensor::from(shp, v_[i]));
    }
    save_checkpoint(state, base + ".opt");
}

void Adam::restore(const std::string& base, std::int64_t step_count, Params& params) {
    const auto stored = read_checkpoint(base + ".opt");
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto im = stored.find("adam.m." + params.name(i));
        const auto iv = stored.find("adam.v." + params.name(i));
        if (im == stored.end() || iv == stored.end()) {
            throw CheckpointError("optimizer state missing moments for '" + params.name(i) + "'");
        }
        if (im->second.shape != params.tensor(i).shape) {
            throw CheckpointError("optimizer state shape mismatch for '" + params.name(i) + "'");
        }
        m_[i] = *im->second.data;
        v_[i] = *iv->second.data;
    }
    t_ = step_count;
}

}  // namespace tog

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tog/tensor.hpp"

namespace tog {

/// Named trainable tensors in registration order. Registration order is
/// the checkpoint serialization order and the Adam update order.
class Params {
  public:
    Tensor add(const std::string& name, Tensor t);

    const Tensor* find(const std::string& name) const;
    Tensor* find(const std::string& name);

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

    void zero_grad();
    std::size_t total_elements() const;

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
};

/// Adam with bias correction and decoupled weight decay (applied as
/// p -= lr*wd*p before the moment update). Parameters whose names are in
/// `frozen` are skipped entirely.
class Adam {
  public:
    explicit Adam(AdamConfig cfg, std::set<std::string> frozen = {});

    /// One update over all unfrozen parameters. Throws TrainingError
    /// naming the parameter if its gradient is non-finite.
    void step(Params& params);

    std::int64_t step_count() const { return t_; }

    /// Moment arrays serialized into a checkpoint container at
    /// `base + ".opt"`; `restore` is its inverse and re-pins the step
    /// counter (training resume).
    void dump(const std::string& base, const Params& params) const;
    void restore(const std::string& base, std::int64_t step_count, Params& params);

  private:
    AdamConfig cfg_;
    std::set<std::string> frozen_;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

}  // namespace tog

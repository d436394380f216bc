#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tog {

using Shape = std::vector<int>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major f32 array. Copies are shallow: `data` and `grad` are
/// shared, so a Tensor behaves like a handle to one storage. Values are
/// treated as immutable once produced by an op; gradients accumulate
/// in-place during backward.
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::shared_ptr<std::vector<float>> grad;  // allocated iff requires_grad
    bool requires_grad = false;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return data != nullptr; }
    std::size_t numel() const { return data ? data->size() : 0; }
    bool is_scalar() const { return numel() == 1; }

    float* ptr() { return data->data(); }
    const float* ptr() const { return data->data(); }
    float* grad_ptr() { return grad->data(); }
    const float* grad_ptr() const { return grad->data(); }

    /// Value of a one-element tensor.
    float value() const;

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;

    /// Same storage viewed under a different shape (numel must match).
    /// Shares both data and grad, so no tape entry is needed.
    Tensor reshaped(Shape new_shape) const;

    /// Deep copy of the values; no grad, no graph history.
    Tensor clone_detached() const;
};

/// Reverse-mode tape. Constructing a Tape installs it as the active tape
/// for the current thread (restored on destruction), so it is meant to
/// live on the stack around a forward pass. Ops append one backward step
/// per recorded operation; `backward` replays them in exact reverse order,
/// which is a valid topological order because recording follows execution.
/// Single-threaded by design; independent tapes on different threads do
/// not share state.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_step);

    /// Seeds d(loss)=1 and runs all recorded steps in reverse.
    /// `loss` must be scalar.
    void backward(Tensor& loss);

    std::size_t size() const { return steps_.size(); }

    /// Active tape for this thread, or nullptr when gradients are off.
    static Tape* active();

  private:
    std::vector<std::function<void()>> steps_;
    Tape* previous_ = nullptr;
};

/// True when a tape is active and any argument wants gradients.
inline bool tracing(const Tensor& a) { return Tape::active() && a.requires_grad; }
inline bool tracing(const Tensor& a, const Tensor& b) {
    return Tape::active() && (a.requires_grad || b.requires_grad);
}

}  // namespace tog

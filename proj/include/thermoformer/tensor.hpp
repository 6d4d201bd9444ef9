#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

namespace thermoformer::ad {

// Dense row-major float64 tensor. Tensor is a shared handle: copies alias the
// same storage, which is what lets a Graph accumulate gradients into parameter
// tensors that outlive any single forward pass. Use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);  // shape [1]
    static Tensor identity(std::size_t n);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    bool is_scalar() const { return numel() == 1; }

    std::vector<double>& data();
    const std::vector<double>& data() const;
    double value() const;  // scalar element; config_error when numel != 1

    bool requires_grad() const;
    void set_requires_grad(bool rg);

    bool has_grad() const;
    std::vector<double>& grad();              // allocates (zero-filled) if absent
    const std::vector<double>& grad() const;  // config_error if absent
    void zero_grad();                         // drops the gradient buffer
    void accumulate_grad(const std::vector<double>& g);

    bool all_finite() const;  // validity check: false if any NaN/Inf

    Tensor clone() const;  // deep copy (no grad buffer carried over)

    // Binary layout: u32 rank, u32 dims..., f64 data, all little-endian.
    void write(std::ostream& out) const;
    static Tensor read(std::istream& in);

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

// Dynamic tape, rebuilt for every forward pass. Ops append nodes in execution
// order, so the node list is already topologically sorted; backward() walks it
// once in reverse. Single-threaded per graph; distinct graphs may run in
// parallel as long as gradient accumulation into shared tensors is serialized.
class Graph {
  public:
    explicit Graph(bool recording = true) : recording_(recording) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise; shapes must match, or one operand must be a scalar or a
    // trailing-shape of the other (broadcast across leading axes only).
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);

    Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only
    Tensor softmax(const Tensor& x, std::size_t axis);
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
    Tensor relu(const Tensor& x);
    Tensor gelu(const Tensor& x);  // tanh approximation
    Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
    Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
    Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
    Tensor transpose(const Tensor& x);  // 2-D
    Tensor sum(const Tensor& x);        // full reduction -> [1]
    Tensor mean(const Tensor& x);       // full reduction -> [1]
    Tensor broadcast(const Tensor& x, std::vector<std::size_t> target_shape);

    // Scalar loss seeds grad 1 and propagates through every node in reverse.
    // Accumulates into existing grad buffers of requires_grad tensors.
    void backward(const Tensor& loss);

  private:
    struct Node {
        Tensor out;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    bool recording_;

    Tensor record(Tensor out, bool needs_grad, std::function<void()> back);
};

// Max over components of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of x. The function is called with a fresh graph
// each time; x is cloned and marked requires_grad internally.
double gradient_check(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x,
                      double h);

}  // namespace thermoformer::ad

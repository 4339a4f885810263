#pragma once

// Reverse-mode automatic differentiation over dense tensors. The operator
// set is exactly what the segmentation network needs: valid convolution,
// 2x2 max pooling, factor-2 bilinear upsampling, center-crop concatenation,
// ReLU/sigmoid, and a few reductions for losses and tests.
//
// A Graph is a define-by-run tape: ops append nodes as they execute and
// backward() replays the tape in reverse. Leaf tensors (parameters, inputs)
// outlive the graph; their gradients accumulate additively across backward
// calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace petrel::ad {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

class Tensor {
public:
    Tensor() = default;

    // Leaf tensors live outside any graph. Parameters pass requires_grad,
    // network inputs usually do not (their gradient is never needed).
    static Tensor leaf(Shape shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int dim(std::size_t i) const { return d_->shape[i]; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->values.size(); }

    // Handle semantics: copies share one buffer, so value and gradient
    // access is shallow-const (as with any shared-pointer-like type).
    std::vector<double>& values() const { return d_->values; }
    double scalar() const;

    bool requires_grad() const { return d_->requires_grad; }
    bool is_op_output() const { return d_->op_output; }
    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<double>& grad() const { return d_->grad; }
    void zero_grad() const;

    // Identity comparison (same underlying buffer).
    bool same_as(const Tensor& other) const { return d_ == other.d_; }

private:
    struct Data {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad; // empty unless requires_grad or op output
        bool requires_grad = false;
        bool op_output = false;
    };
    std::shared_ptr<Data> d_;
    friend class Graph;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // For operators defined outside this header (e.g. loss criteria):
    // make_output allocates the node's result, record appends its backward
    // closure. Closures run in reverse recording order.
    Tensor make_output(Shape shape);
    void record(const char* name, std::function<void()> backward);

    // Seeds d(loss)/d(loss) = seed and accumulates gradients onto every
    // requires_grad leaf. Intermediate gradients are rebuilt per call, so
    // calling twice doubles leaf gradients exactly.
    void backward(const Tensor& loss, double seed = 1.0);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        const char* name;
        Tensor output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    Tensor pending_output_;
};

// Throws if t contains NaN/Inf; every operator calls this on its result.
void ensure_finite(const Tensor& t, const char* op);

// out[o,y,x] = bias[o] + sum_{c,i,j} input[c,y+i,x+j] * weights[o,c,i,j]
// (cross-correlation, no padding). input (C,H,W), weights (O,C,kh,kw),
// bias (O) -> (O, H-kh+1, W-kw+1).
Tensor conv2d_valid(Graph& g, const Tensor& input, const Tensor& weights,
                    const Tensor& bias);

// Non-overlapping 2x2 max; ties resolve to the first cell in row-major
// order so backward is deterministic. (C,H,W) -> (C,H/2,W/2), H and W even.
Tensor maxpool2(Graph& g, const Tensor& input);

// Factor-2 bilinear upsampling, align-corners=false. Backward splats with
// the transposed weights. (C,H,W) -> (C,2H,2W).
Tensor upsample_bilinear2(Graph& g, const Tensor& input);

// Center-crops high_res to low_res's spatial size and concatenates along
// channels, high_res channels first. Crop margins must be even.
Tensor crop_concat(Graph& g, const Tensor& high_res, const Tensor& low_res);

Tensor relu(Graph& g, const Tensor& t);
Tensor sigmoid(Graph& g, const Tensor& t);

// Elementwise product; shapes must match.
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);

// Sum of all elements -> shape {1}.
Tensor sum(Graph& g, const Tensor& t);

// out = factor * t.
Tensor scale(Graph& g, const Tensor& t, double factor);

} // namespace petrel::ad

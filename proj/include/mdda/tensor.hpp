#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mdda/common.hpp"

namespace mdda {

struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;

    size_t numel() const {
        return static_cast<size_t>(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

// Dense NCHW tensor, row-major. Gradient buffer is allocated lazily on the
// first accumulation so inference carries no overhead.
template <typename T>
class Tensor {
public:
    Tensor(int n, int c, int h, int w, bool requires_grad = false)
        : shape{n, c, h, w}, requires_grad(requires_grad) {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw DimError("negative tensor dimension in " + shape.str());
        data.assign(shape.numel(), T(0));
    }

    explicit Tensor(Shape4 s, bool requires_grad = false)
        : Tensor(s.n, s.c, s.h, s.w, requires_grad) {}

    Shape4 shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until ensure_grad()
    bool requires_grad = false;

    size_t size() const { return data.size(); }

    size_t idx(int n, int c, int h, int w) const {
        return ((static_cast<size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w;
    }
    T& at(int n, int c, int h, int w) { return data[idx(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data[idx(n, c, h, w)]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), T(0));
    }

    T& g(size_t i) { return grad[i]; }

    bool all_finite() const {
        for (const T& v : data)
            if (!is_finite(v)) return false;
        return true;
    }
};

template <typename T>
using TP = std::shared_ptr<Tensor<T>>;

template <typename T>
TP<T> make_tensor(int n, int c, int h, int w, bool requires_grad = false) {
    return std::make_shared<Tensor<T>>(n, c, h, w, requires_grad);
}

template <typename T>
TP<T> make_tensor(Shape4 s, bool requires_grad = false) {
    return std::make_shared<Tensor<T>>(s, requires_grad);
}

// Reverse-mode tape. Ops append one node each; backward() replays the nodes
// in exact reverse order. The tape is single-writer by contract.
template <typename T>
class Tape {
public:
    void record(const char* op, std::function<void()> backward) {
        nodes_.push_back(Node{op, std::move(backward)});
    }

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be scalar-shaped.
    void backward(const TP<T>& loss) {
        if (loss->size() != 1)
            throw DimError("backward expects a scalar loss, got " + loss->shape.str());
        if (!loss->requires_grad)
            throw NumericError("backward called on a loss that requires no grad");
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        const char* op;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

// Helper shared by every op: decide whether the output participates in
// autodiff and, if so, record the node.
template <typename T, typename F>
void record_if_needed(Tape<T>* tape, const TP<T>& out, const char* op, F&& fn) {
    if (tape != nullptr && out->requires_grad) tape->record(op, std::forward<F>(fn));
}

// Forward results must stay finite; a NaN/Inf intermediate is an error state.
template <typename T>
void check_finite(const TP<T>& t, const char* op) {
    if (!t->all_finite())
        throw NumericError(std::string(op) + ": non-finite value in output " + t->shape.str());
}

}  // namespace mdda

#pragma once

#include <functional>
#include <vector>

#include "everadapt/tensor.hpp"

namespace everadapt {

// Reverse-mode tape. Operations append nodes in execution order, so the
// node list is topologically sorted by construction and the backward pass
// is a single reverse sweep that visits each node exactly once.
//
// Convention for backprop closures: read out->grad (guaranteed non-empty
// when the closure runs), accumulate (+=) into each input that has
// requires_grad, calling ensure_grad() first. Inputs with requires_grad
// false are left untouched, which is what makes detached tensors receive
// no gradient.
class Graph {
public:
    struct Node {
        TensorPtr out;
        std::function<void()> backprop;
        const char* op_name;
    };

    void record(TensorPtr out, std::function<void()> backprop, const char* op_name) {
        nodes_.push_back(Node{std::move(out), std::move(backprop), op_name});
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Nodes whose
    // output never received a gradient (dead branches) are skipped.
    void backward(const TensorPtr& loss) {
        if (!loss || !loss->is_scalar())
            throw state_error("backward requires a scalar loss tensor");
        loss->ensure_grad();
        loss->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->out->grad.empty() && it->backprop) it->backprop();
        }
    }

    std::size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

} // namespace everadapt

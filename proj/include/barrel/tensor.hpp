#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace barrel {

struct dim_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline long numel(const Shape& shape) {
    long n = 1;
    for (int e : shape) {
        if (e <= 0) throw dim_error("non-positive extent in shape");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until backward first touches this node
};

// When set, every op validates its output for NaN/Inf and throws naming
// itself. Off by default; the trainer flips it on to locate a bad op.
template <typename T>
inline thread_local bool nan_check_enabled = false;

template <typename T>
class Tensor {
public:
    Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<size_t>(numel(node_->shape)), fill);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        node_->shape = std::move(shape);
        if (static_cast<long>(values.size()) != numel(node_->shape))
            throw dim_error("value count " + std::to_string(values.size()) +
                            " does not fill shape " + shape_str(node_->shape));
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return node_->shape; }
    int extent(int axis) const { return node_->shape.at(static_cast<size_t>(axis)); }
    size_t size() const { return node_->data.size(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (node_->grad.empty())
            throw std::logic_error("grad not populated; run backward() first");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    T& at(int i) { return node_->data[static_cast<size_t>(i)]; }
    T at(int i) const { return node_->data[static_cast<size_t>(i)]; }
    T& at(int i, int j) {
        return node_->data[static_cast<size_t>(i) * node_->shape[1] + j];
    }
    T at(int i, int j) const {
        return node_->data[static_cast<size_t>(i) * node_->shape[1] + j];
    }
    T& at(int i, int j, int k) {
        return node_->data[(static_cast<size_t>(i) * node_->shape[1] + j) * node_->shape[2] + k];
    }
    T at(int i, int j, int k) const {
        return node_->data[(static_cast<size_t>(i) * node_->shape[1] + j) * node_->shape[2] + k];
    }

    T item() const {
        if (size() != 1) throw dim_error("item() on non-scalar " + shape_str(shape()));
        return node_->data[0];
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

// Ensures a node's grad buffer exists (zero-filled) and returns it.
template <typename T>
inline std::vector<T>& grad_buf(const std::shared_ptr<TensorNode<T>>& n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
    return n->grad;
}

// Reverse-mode tape. Constructing a Tape makes it the active one for the
// current thread; ops record their backward rules onto it in forward order.
template <typename T>
class Tape {
public:
    Tape() : prev_(active_) { active_ = this; }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(const char* op_name, std::function<void()> backward_fn) {
        records_.push_back({op_name, std::move(backward_fn)});
    }

    size_t size() const { return records_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Records are
    // in topological (forward) order, so one reverse sweep visits each op
    // once with its output grad fully accumulated.
    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1)
            throw std::logic_error("backward() requires a scalar loss, got " +
                                   shape_str(loss.shape()));
        grad_buf(loss.node())[0] = T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn();
    }

private:
    struct Record {
        const char* name;
        std::function<void()> fn;
    };
    std::vector<Record> records_;
    Tape* prev_;
    static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
inline bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
    if (!Tape<T>::active()) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
inline void finish_op(const char* name, Tensor<T>& out, bool tracked,
                      std::function<void()> backward_fn) {
    if (nan_check_enabled<T>) {
        for (T v : out.data())
            if (!std::isfinite(v))
                throw numeric_error(std::string("non-finite value produced by op '") +
                                    name + "'");
    }
    if (tracked) {
        out.set_requires_grad(true);
        Tape<T>::active()->record(name, std::move(backward_fn));
    }
}

}  // namespace barrel

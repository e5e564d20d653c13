#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mmpath/autodiff.hpp"
#include "mmpath/rng.hpp"

namespace mmpath {

// Named parameter matrices in a stable insertion order. The order defines
// the checkpoint manifest and the optimizer state layout.
template <class S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        ad::Mat<S> value;
    };

    int add(const std::string& name, ad::Mat<S> value) {
        if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        by_name_[name] = static_cast<int>(entries_.size());
        entries_.push_back({name, std::move(value)});
        return static_cast<int>(entries_.size()) - 1;
    }

    int index_of(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return by_name_.count(name) > 0; }

    ad::Mat<S>& value(int idx) { return entries_[static_cast<size_t>(idx)].value; }
    const ad::Mat<S>& value(int idx) const { return entries_[static_cast<size_t>(idx)].value; }
    ad::Mat<S>& value(const std::string& name) { return value(index_of(name)); }
    const ad::Mat<S>& value(const std::string& name) const { return value(index_of(name)); }

    const std::string& name(int idx) const { return entries_[static_cast<size_t>(idx)].name; }
    int count() const { return static_cast<int>(entries_.size()); }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, int> by_name_;
};

// Binds a ParamStore to one Tape: each parameter becomes a single leaf
// node per tape, so every use shares the node and gradients accumulate.
template <class S>
class TapeParams {
public:
    TapeParams(ad::Tape<S>& tape, ParamStore<S>& store, bool requires_grad = true)
        : tape_(&tape), store_(&store), node_(static_cast<size_t>(store.count()), -1),
          requires_grad_(requires_grad) {}

    ad::Var<S> use(int param_idx) {
        int& n = node_[static_cast<size_t>(param_idx)];
        if (n < 0) {
            auto v = tape_->leaf(store_->value(param_idx), requires_grad_);
            n = v.idx;
        }
        return {tape_, n};
    }

    ad::Var<S> use(const std::string& name) { return use(store_->index_of(name)); }

    // Copies the tape gradients of every touched parameter into `grads`
    // (zero matrices for untouched ones).
    void collect_grads(std::vector<ad::Mat<S>>& grads) const {
        grads.resize(static_cast<size_t>(store_->count()));
        for (int i = 0; i < store_->count(); ++i) {
            int n = node_[static_cast<size_t>(i)];
            if (n >= 0 && tape_->grad_live(n)) {
                grads[static_cast<size_t>(i)] = tape_->grad(n);
            } else {
                const auto& v = store_->value(i);
                grads[static_cast<size_t>(i)] = ad::Mat<S>::Zero(v.rows(), v.cols());
            }
        }
    }

private:
    ad::Tape<S>* tape_;
    ParamStore<S>* store_;
    std::vector<int> node_;
    bool requires_grad_;
};

// Adaptive moment estimation over the whole store.
template <class S>
class Adam {
public:
    Adam(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<S>& store, const std::vector<ad::Mat<S>>& grads,
              const std::vector<uint8_t>& trainable = {}) {
        if (m_.empty()) {
            m_.resize(static_cast<size_t>(store.count()));
            v_.resize(static_cast<size_t>(store.count()));
            for (int i = 0; i < store.count(); ++i) {
                const auto& val = store.value(i);
                m_[static_cast<size_t>(i)] = ad::Mat<S>::Zero(val.rows(), val.cols());
                v_[static_cast<size_t>(i)] = ad::Mat<S>::Zero(val.rows(), val.cols());
            }
        }
        ++t_;
        S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
        S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
        for (int i = 0; i < store.count(); ++i) {
            if (!trainable.empty() && !trainable[static_cast<size_t>(i)]) continue;
            auto& m = m_[static_cast<size_t>(i)];
            auto& v = v_[static_cast<size_t>(i)];
            const auto& g = grads[static_cast<size_t>(i)];
            m = beta1_ * m + (S(1) - beta1_) * g;
            v = (beta2_ * v.array() + (S(1) - beta2_) * g.array().square()).matrix();
            auto mhat = m.array() / bc1;
            auto vhat = v.array() / bc2;
            store.value(i).array() -= lr_ * mhat / (vhat.sqrt() + eps_);
        }
    }

private:
    S lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<ad::Mat<S>> m_, v_;
};

// Plain gradient descent; kept as the alternative optimizer choice.
template <class S>
class Sgd {
public:
    explicit Sgd(S lr) : lr_(lr) {}

    void step(ParamStore<S>& store, const std::vector<ad::Mat<S>>& grads,
              const std::vector<uint8_t>& trainable = {}) {
        for (int i = 0; i < store.count(); ++i) {
            if (!trainable.empty() && !trainable[static_cast<size_t>(i)]) continue;
            store.value(i) -= lr_ * grads[static_cast<size_t>(i)];
        }
    }

private:
    S lr_;
};

// Gaussian init, std 0.02 unless overridden. Every parameter draws from
// its own named substream so insertion order never matters.
template <class S>
ad::Mat<S> random_init(uint64_t seed, const std::string& name, Eigen::Index rows, Eigen::Index cols,
                       double stddev = 0.02) {
    Rng rng = substream(seed, "init." + name);
    ad::Mat<S> m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = static_cast<S>(rng.normal(0.0, stddev));
        }
    }
    return m;
}

} // namespace mmpath

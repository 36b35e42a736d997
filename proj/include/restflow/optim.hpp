#pragma once

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"

namespace restflow {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

// Named trainable parameters plus per-parameter Adam moments. One shared step
// counter is bumped once per adam_step call.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        ad::Value value;
        std::vector<double> m;   // first moment
        std::vector<double> v;   // second moment
    };

    ad::Value add(const std::string& name, Matrix init) {
        if (index_.count(name)) throw ValidationError("ParamStore: duplicate parameter " + name);
        Entry e;
        e.name = name;
        e.value = ad::leaf(std::move(init));
        e.m.assign(e.value.m().size(), 0.0);
        e.v.assign(e.value.m().size(), 0.0);
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    ad::Value get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("ParamStore: unknown parameter " + name);
        return entries_[it->second].value;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    long step() const { return step_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.m().size();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) {
            auto& g = e.value.n->grad;
            std::fill(g.data.begin(), g.data.end(), 0.0);
        }
    }

    // Adam with bias correction. Decoupled weight decay shrinks the parameter
    // before the Adam delta; gradients are zeroed afterwards.
    void adam_step(const AdamConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (auto& e : entries_) {
            auto& p = e.value.n->val.data;
            auto& g = e.value.n->grad_buf().data;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (cfg.weight_decay != 0.0) p[i] -= cfg.lr * cfg.weight_decay * p[i];
                e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
                e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                double mhat = e.m[i] / bc1;
                double vhat = e.v[i] / bc2;
                p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
        zero_grads();
    }

    // Text serialization: manifest line (name rows cols) followed by the
    // values with full round-trip precision.
    void save(std::ostream& os) const {
        os << "params " << entries_.size() << "\n";
        os << std::setprecision(17);
        for (const auto& e : entries_) {
            const Matrix& m = e.value.m();
            os << e.name << " " << m.rows << " " << m.cols << "\n";
            for (std::size_t i = 0; i < m.size(); ++i)
                os << m.data[i] << (i + 1 == m.size() ? "" : " ");
            os << "\n";
        }
    }

    // Loads values into a freshly declared store (creates entries).
    void load(std::istream& is) {
        std::string tag;
        std::size_t count = 0;
        if (!(is >> tag >> count) || tag != "params")
            throw ParseError("ParamStore: bad header, expected 'params <n>'");
        for (std::size_t k = 0; k < count; ++k) {
            std::string name;
            std::size_t r = 0, c = 0;
            if (!(is >> name >> r >> c)) throw ParseError("ParamStore: bad manifest entry");
            Matrix m(r, c);
            for (std::size_t i = 0; i < m.size(); ++i)
                if (!(is >> m.data[i]))
                    throw ParseError("ParamStore: short payload for " + name);
            if (has(name)) {
                ad::Value v = get(name);
                if (v.rows() != r || v.cols() != c)
                    throw ValidationError("ParamStore: shape mismatch for " + name);
                v.n->val = std::move(m);
            } else {
                add(name, std::move(m));
            }
        }
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    long step_ = 0;
};

}  // namespace restflow

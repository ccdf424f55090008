#pragma once

// Named learnable parameters with deterministic iteration order.

#include <map>
#include <string>
#include <vector>

#include "hformer/tensor.hpp"

namespace hformer {

template <class T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool no_decay = false;  // exempt from weight decay (biases, norms, tables, gates)
    };

    Tensor<T>& add(const std::string& name, Tensor<T> t, bool no_decay) {
        if (index_.count(name)) throw std::runtime_error("ParamStore: duplicate parameter name " + name);
        t.enable_grad();
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, std::move(t), no_decay});
        return entries_.back().tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
        return entries_[it->second].tensor;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

  private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

}  // namespace hformer

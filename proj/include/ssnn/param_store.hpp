#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ssnn/tensor.hpp"

namespace ssnn {

// Named parameter slots with deterministic (insertion) iteration order.
// Shapes are fixed at registration; values are mutated only by the optimizer.
class ParamStore {
public:
    int add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw contract_error("duplicate parameter name: " + name);
        int id = static_cast<int>(names_.size());
        index_[name] = id;
        names_.push_back(name);
        values_.push_back(std::move(init));
        return id;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    int require(const std::string& name) const {
        int id = find(name);
        if (id < 0) throw contract_error("unknown parameter: " + name);
        return id;
    }

    int size() const { return static_cast<int>(names_.size()); }
    const std::string& name(int id) const { return names_[static_cast<size_t>(id)]; }
    const Tensor& value(int id) const { return values_[static_cast<size_t>(id)]; }
    const Tensor& value(const std::string& name) const { return value(require(name)); }

    // Shape-preserving write; the only mutation path.
    void set(int id, Tensor v) {
        check_same_shape(values_[static_cast<size_t>(id)], v, "ParamStore::set");
        values_[static_cast<size_t>(id)] = std::move(v);
    }

    double* raw(int id) { return values_[static_cast<size_t>(id)].data(); }

    bool all_finite() const {
        for (const Tensor& t : values_)
            if (!t.all_finite()) return false;
        return true;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace ssnn

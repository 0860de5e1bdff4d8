#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

enum class ParamKind : std::uint8_t { learnable = 0, running_stat = 1 };

/// Named, insertion-ordered collection of tensors plus scalar metadata.
///
/// Learnable tensors (conv kernels, BN gamma/beta) receive gradients; running
/// statistics are carried along for inference and checkpointing only.
template <typename T>
class BasicParamStore {
public:
    struct Entry {
        std::string name;
        ParamKind kind = ParamKind::learnable;
        Tensor<T> tensor;
    };

    void add(std::string name, ParamKind kind, Tensor<T> tensor) {
        if (index_.contains(name)) throw InputError("duplicate parameter name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), kind, std::move(tensor)});
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    Tensor<T>& at(const std::string& name) { return entries_[position(name)].tensor; }
    const Tensor<T>& at(const std::string& name) const { return entries_[position(name)].tensor; }

    const Entry& entry(const std::string& name) const { return entries_[position(name)]; }

    std::vector<Entry>& entries() noexcept { return entries_; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    void set_meta(const std::string& key, double value) { metadata_[key] = value; }
    std::optional<double> meta(const std::string& key) const {
        auto it = metadata_.find(key);
        if (it == metadata_.end()) return std::nullopt;
        return it->second;
    }
    const std::map<std::string, double>& metadata() const noexcept { return metadata_; }

    /// Zero tensors for every learnable entry, in the same order. Used as the
    /// gradient container of a backward pass.
    BasicParamStore zeros_like_learnable() const {
        BasicParamStore out;
        for (const auto& e : entries_) {
            if (e.kind == ParamKind::learnable) {
                out.add(e.name, ParamKind::learnable, Tensor<T>(e.tensor.shape()));
            }
        }
        return out;
    }

    template <typename U>
    BasicParamStore<U> cast() const {
        BasicParamStore<U> out;
        for (const auto& e : entries_) out.add(e.name, e.kind, e.tensor.template cast<U>());
        for (const auto& [k, v] : metadata_) out.set_meta(k, v);
        return out;
    }

private:
    std::size_t position(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InputError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, double> metadata_;
};

using ParamStore = BasicParamStore<float>;

/// Learnable scalar count: conv kernels, projections, BN gamma and beta.
/// Running statistics are excluded.
template <typename T>
std::size_t count_params(const BasicParamStore<T>& store) {
    std::size_t total = 0;
    for (const auto& e : store.entries()) {
        if (e.kind == ParamKind::learnable) total += e.tensor.size();
    }
    return total;
}

/// Exact comparison of names, kinds, shapes, values and metadata.
template <typename T>
bool bit_identical(const BasicParamStore<T>& a, const BasicParamStore<T>& b) {
    if (a.size() != b.size() || a.metadata() != b.metadata()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.entries()[i];
        const auto& y = b.entries()[i];
        if (x.name != y.name || x.kind != y.kind || !bit_identical(x.tensor, y.tensor)) return false;
    }
    return true;
}

}  // namespace resunet

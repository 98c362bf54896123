#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "polygraph/autodiff.hpp"
#include "polygraph/errors.hpp"
#include "polygraph/tensor.hpp"

namespace polygraph {

/// Gradients keyed by parameter name. Frozen parameters never appear.
using GradientMap = std::map<std::string, Tensor>;

/// Named, shaped parameter tensors with per-tensor frozen flags and a small
/// key/value architecture descriptor. Insertion order is preserved and is
/// part of the serialized form, so save -> load round-trips byte-exactly.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool frozen = false;
    };

    void add(const std::string& name, Tensor t, bool frozen = false) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, std::move(t), frozen});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& tensor(const std::string& name) { return entry(name).tensor; }
    const Tensor& tensor(const std::string& name) const { return entry(name).tensor; }

    bool frozen(const std::string& name) const { return entry(name).frozen; }
    void set_frozen(const std::string& name, bool f) { entry(name).frozen = f; }

    void freeze_all() {
        for (auto& e : entries_) e.frozen = true;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }

    std::int64_t total_parameters() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    /// Architecture descriptor: ordered key/value pairs, serialized in the
    /// checkpoint header.
    void set_meta(const std::string& key, const std::string& value) {
        for (auto& kv : meta_) {
            if (kv.first == key) {
                kv.second = value;
                return;
            }
        }
        meta_.emplace_back(key, value);
    }

    std::string meta(const std::string& key) const {
        for (const auto& kv : meta_) {
            if (kv.first == key) return kv.second;
        }
        throw ConfigError("missing descriptor key: " + key);
    }

    std::string meta_or(const std::string& key, const std::string& fallback) const {
        for (const auto& kv : meta_) {
            if (kv.first == key) return kv.second;
        }
        return fallback;
    }

    bool has_meta(const std::string& key) const {
        for (const auto& kv : meta_) {
            if (kv.first == key) return true;
        }
        return false;
    }

    const std::vector<std::pair<std::string, std::string>>& meta_entries() const { return meta_; }

    // -- checkpoint format ----------------------------------------------
    // Text header, then one record per tensor:
    //   polygraph-checkpoint 1
    //   meta <key> <value>        (repeated)
    //   tensors <count>
    //   tensor <name> <frozen:0|1> <rank> <d0> <d1> ...
    //   <raw little-endian float64 payload>
    //   end
    // ---------------------------------------------------------------------

    void serialize(std::ostream& os) const {
        static_assert(sizeof(double) == 8, "64-bit IEEE doubles required");
        os << "polygraph-checkpoint 1\n";
        for (const auto& kv : meta_) os << "meta " << kv.first << " " << kv.second << "\n";
        os << "tensors " << entries_.size() << "\n";
        for (const auto& e : entries_) {
            os << "tensor " << e.name << " " << (e.frozen ? 1 : 0) << " "
               << e.tensor.rank();
            for (int i = 0; i < e.tensor.rank(); ++i) os << " " << e.tensor.dim(i);
            os << "\n";
            write_le(os, e.tensor.data(), e.tensor.size());
            os << "\n";
        }
        os << "end\n";
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open checkpoint for writing: " + path);
        serialize(out);
        if (!out) throw DataError("failed while writing checkpoint: " + path);
    }

    static ParameterStore deserialize(std::istream& is) {
        ParameterStore store;
        std::string line;
        if (!std::getline(is, line) || line != "polygraph-checkpoint 1") {
            throw DataError("not a polygraph checkpoint (bad magic line)");
        }
        size_t tensor_count = 0;
        bool saw_count = false;
        while (std::getline(is, line)) {
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "meta") {
                std::string key;
                ls >> key;
                std::string value;
                std::getline(ls, value);
                if (!value.empty() && value[0] == ' ') value.erase(0, 1);
                store.set_meta(key, value);
            } else if (tag == "tensors") {
                ls >> tensor_count;
                saw_count = true;
                break;
            } else {
                throw DataError("unexpected checkpoint header line: " + line);
            }
        }
        if (!saw_count) throw DataError("checkpoint missing tensor count");
        for (size_t i = 0; i < tensor_count; ++i) {
            if (!std::getline(is, line)) throw DataError("truncated checkpoint");
            std::istringstream ls(line);
            std::string tag, name;
            int frozen = 0, rank = 0;
            ls >> tag >> name >> frozen >> rank;
            if (tag != "tensor" || rank <= 0) throw DataError("bad tensor record: " + line);
            Shape shape(static_cast<size_t>(rank));
            for (int d = 0; d < rank; ++d) ls >> shape[static_cast<size_t>(d)];
            Tensor t(shape);
            read_le(is, t.data(), t.size());
            int nl = is.get();
            if (nl != '\n') throw DataError("bad tensor payload terminator for " + name);
            store.add(name, std::move(t), frozen != 0);
        }
        if (!std::getline(is, line) || line != "end") throw DataError("checkpoint missing end marker");
        return store;
    }

    static ParameterStore load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open checkpoint: " + path);
        return deserialize(in);
    }

    std::string to_bytes() const {
        std::ostringstream os(std::ios::binary);
        serialize(os);
        return os.str();
    }

private:
    Entry& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second];
    }
    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second];
    }

    static void write_le(std::ostream& os, const double* p, std::int64_t n) {
        // Host is little-endian on every supported target; memcpy keeps the
        // payload bit-exact.
        os.write(reinterpret_cast<const char*>(p), n * static_cast<std::int64_t>(sizeof(double)));
    }

    static void read_le(std::istream& is, double* p, std::int64_t n) {
        is.read(reinterpret_cast<char*>(p), n * static_cast<std::int64_t>(sizeof(double)));
        if (is.gcount() != n * static_cast<std::int64_t>(sizeof(double))) {
            throw DataError("truncated tensor payload in checkpoint");
        }
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<std::pair<std::string, std::string>> meta_;
};

/// Graph leaves for every tensor in a store. Non-frozen parameters become
/// differentiable leaves; frozen ones are constants and can never collect a
/// gradient. Leaf gradients accumulate across backward() calls until
/// zero_grads(), which is what per-clip gradient accumulation relies on.
class Binding {
public:
    explicit Binding(const ParameterStore& store) {
        for (const auto& e : store.entries()) {
            vars_.emplace_back(e.name, Var::leaf(e.tensor, !e.frozen));
            index_[e.name] = vars_.size() - 1;
        }
    }

    const Var& operator[](const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("binding has no parameter: " + name);
        return vars_[it->second].second;
    }

    void zero_grads() {
        for (auto& [name, var] : vars_) {
            Tensor& g = var.node()->grad;
            if (g.size() > 0) std::fill(g.data(), g.data() + g.size(), 0.0);
        }
    }

    /// Gradient per non-frozen parameter, scaled by `scale`. Parameters the
    /// loss never touched come back as zeros.
    GradientMap gradients(double scale = 1.0) const {
        GradientMap out;
        for (const auto& [name, var] : vars_) {
            if (!var.needs_grad()) continue;
            const Tensor& g = var.node()->grad;
            Tensor t(var.value().shape());
            if (g.size() > 0) {
                for (std::int64_t i = 0; i < g.size(); ++i) t[i] = g[i] * scale;
            }
            out.emplace(name, std::move(t));
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, Var>> vars_;
    std::unordered_map<std::string, size_t> index_;
};

/// Reverse-mode gradients of a scalar loss for every non-frozen parameter in
/// the binding.
inline GradientMap compute_gradients(const Var& loss, Binding& binding) {
    binding.zero_grads();
    backward(loss);
    return binding.gradients();
}

}  // namespace polygraph

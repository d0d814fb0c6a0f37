#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "bltrader/gradnet/tensor.hpp"

namespace bltrader::gradnet {

enum class ParamRole : std::uint32_t {
    Weight = 0,     // Glorot uniform
    Bias = 1,       // zeros
    Gain = 2,       // ones
    Embedding = 3,  // normal(0, 0.02)
    Output = 4,     // zeros; a weight matrix that starts switched off
};

struct ParamSpec {
    std::string name;
    Shape shape;
    ParamRole role = ParamRole::Weight;
};

/// Glorot fan sizes: rank-2 weights are stored (in, out); rank-4 conv kernels
/// are [out_channels, in_channels, kh, kw].
inline std::pair<double, double> fan_in_out(const Shape& s) {
    if (s.size() == 2) return {static_cast<double>(s[0]), static_cast<double>(s[1])};
    if (s.size() == 4) {
        const double receptive = static_cast<double>(s[2]) * s[3];
        return {s[1] * receptive, s[0] * receptive};
    }
    const double n = static_cast<double>(numel(s));
    return {n, n};
}

/// Ordered collection of named trainable tensors with matching gradient slots.
class ParamStore {
public:
    struct Entry {
        std::string name;
        ParamRole role = ParamRole::Weight;
        Tensor value;
        Tensor grad;
    };

    void add(const std::string& name, Tensor value, ParamRole role = ParamRole::Weight) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
        index_[name] = entries_.size();
        Tensor grad = Tensor::zeros(value.shape);
        entries_.push_back({name, role, std::move(value), std::move(grad)});
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    Entry& at(const std::string& name) { return entries_.at(lookup(name)); }
    const Entry& at(const std::string& name) const { return entries_.at(lookup(name)); }
    Tensor& value(const std::string& name) { return at(name).value; }
    const Tensor& value(const std::string& name) const { return at(name).value; }

    std::int64_t num_scalars() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.grad.data.setZero();
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& e : entries_) s += e.grad.data.squaredNorm();
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.value.data.allFinite()) return false;
        return true;
    }

    /// value += step * grad for every entry.
    void apply_gradient(double step) {
        for (auto& e : entries_) e.value.data += step * e.grad.data;
    }

    bool operator==(const ParamStore& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        for (size_t i = 0; i < entries_.size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = o.entries_[i];
            if (a.name != b.name || a.role != b.role || !(a.value == b.value)) return false;
        }
        return true;
    }

private:
    size_t lookup(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

inline ParamStore init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore store;
    for (const auto& s : specs) {
        Tensor t(s.shape);
        switch (s.role) {
            case ParamRole::Weight: {
                const auto [fi, fo] = fan_in_out(s.shape);
                const double a = std::sqrt(6.0 / (fi + fo));
                std::uniform_real_distribution<double> u(-a, a);
                for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = u(rng);
                break;
            }
            case ParamRole::Bias:
            case ParamRole::Output:
                break;
            case ParamRole::Gain:
                t.data.setOnes();
                break;
            case ParamRole::Embedding: {
                std::normal_distribution<double> nd(0.0, 0.02);
                for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = nd(rng);
                break;
            }
        }
        store.add(s.name, std::move(t), s.role);
    }
    return store;
}

/// Leaf Vars for one forward pass over a ParamStore. Each pass gets its own leaves,
/// so independent passes can run on separate threads.
class Bindings {
public:
    explicit Bindings(const ParamStore& store, bool requires_grad = true) {
        for (const auto& e : store.entries()) {
            index_[e.name] = vars_.size();
            vars_.push_back(leaf(e.value, requires_grad));
        }
    }

    const Var& operator[](const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unbound parameter '" + name + "'");
        return vars_[it->second];
    }

    const std::vector<Var>& vars() const { return vars_; }

    /// Leaf gradients in store order (zeros where nothing flowed).
    std::vector<Eigen::VectorXd> gradients() const {
        std::vector<Eigen::VectorXd> out;
        out.reserve(vars_.size());
        for (const auto& v : vars_) out.push_back(v.grad().data);
        return out;
    }

private:
    std::vector<Var> vars_;
    std::map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   bytes 0..7   magic "BLTRPRM\0"
//   u32          format version (1)
//   u32 + bytes  metadata (UTF-8, free form; policies store their config here)
//   u32          tensor count
//   per tensor:  u32 name length, name bytes, u32 role, u32 rank, rank x i64 dims,
//                numel x f64 values
// All integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'B', 'L', 'T', 'R', 'P', 'R', 'M', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ParseError("checkpoint truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

inline std::string read_string(std::istream& in) {
    const auto len = read_le<std::uint32_t>(in);
    std::string s(len, '\0');
    if (len && !in.read(s.data(), len)) throw ParseError("checkpoint truncated");
    return s;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const ParamStore& store, const std::string& metadata = {}) {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
    out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& e : store.entries()) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.role));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.shape.size()));
        for (int d : e.value.shape) detail::write_le<std::int64_t>(out, d);
        for (Eigen::Index i = 0; i < e.value.size(); ++i) detail::write_le<double>(out, e.value.data(i));
    }
}

struct Checkpoint {
    ParamStore params;
    std::string metadata;
};

inline Checkpoint load_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ParseError("not a parameter checkpoint (bad magic)");
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.metadata = detail::read_string(in);
    const auto count = detail::read_le<std::uint32_t>(in);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = detail::read_string(in);
        const auto role = detail::read_le<std::uint32_t>(in);
        if (role > static_cast<std::uint32_t>(ParamRole::Output)) throw ParseError("bad parameter role");
        const auto rank = detail::read_le<std::uint32_t>(in);
        if (rank > 8) throw ParseError("bad tensor rank");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = detail::read_le<std::int64_t>(in);
            if (d < 0 || d > (1 << 28)) throw ParseError("bad tensor dimension");
            shape.push_back(static_cast<int>(d));
        }
        Tensor t(shape);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = detail::read_le<double>(in);
        ck.params.add(name, std::move(t), static_cast<ParamRole>(role));
    }
    return ck;
}

inline void save_checkpoint_file(const std::string& path, const ParamStore& store, const std::string& metadata = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, store, metadata);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingCheckpoint("cannot open checkpoint '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace bltrader::gradnet

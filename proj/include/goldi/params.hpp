#pragma once

#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "goldi/autodiff.hpp"
#include "goldi/common.hpp"

namespace goldi::model {

template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> adam_m, adam_v;  // sized on first optimizer step
  bool trainable = true;
  bool decay = true;  // weight-decay membership
};

// Named, insertion-ordered parameter collection. Iteration order is part of
// the determinism contract (checkpoints, optimizer sweeps, gradcheck).
template <typename S>
class ParamStore {
 public:
  Parameter<S>& add(const std::string& name, Mat<S> value, bool decay = true) {
    require(index_.find(name) == index_.end(), "duplicate parameter: " + name);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(Parameter<S>{name, std::move(value), {}, {}, true, decay});
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<S>& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[static_cast<size_t>(it->second)];
  }
  const Parameter<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[static_cast<size_t>(it->second)];
  }

  std::vector<Parameter<S>>& all() { return params_; }
  const std::vector<Parameter<S>>& all() const { return params_; }
  size_t count() const { return params_.size(); }

  Index coordinate_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Deep copy of every parameter whose name starts with one of the prefixes.
  ParamStore<S> clone_subset(const std::vector<std::string>& prefixes) const {
    ParamStore<S> out;
    for (const auto& p : params_)
      for (const auto& pre : prefixes)
        if (p.name.rfind(pre, 0) == 0) {
          out.add(p.name, p.value, p.decay);
          break;
        }
    return out;
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.value.template cast<T>(), p.decay);
      q.trainable = p.trainable;
      if (p.adam_m.size()) q.adam_m = p.adam_m.template cast<T>();
      if (p.adam_v.size()) q.adam_v = p.adam_v.template cast<T>();
    }
    return out;
  }

 private:
  std::vector<Parameter<S>> params_;
  std::unordered_map<std::string, int> index_;
};

// Per-step binding of a store onto a graph. Parameters of a trainable store
// become leaves; a frozen binding (teacher) enters as constants, which is
// what makes the stop-gradient structural rather than a runtime mask.
template <typename S>
class Binding {
 public:
  Binding(ad::Graph<S>& g, ParamStore<S>& store, bool trainable) : store_(&store) {
    for (auto& p : store.all())
      vars_[p.name] = trainable && p.trainable ? g.leaf(p.value) : g.constant(p.value);
  }

  ad::Var<S> operator()(const std::string& name) const {
    auto it = vars_.find(name);
    require(it != vars_.end(), "binding: unknown parameter '" + name + "'");
    return it->second;
  }

  // Pull accumulated gradients back out of the graph, keyed by name.
  std::unordered_map<std::string, Mat<S>> gradients(ad::Graph<S>& g) const {
    std::unordered_map<std::string, Mat<S>> out;
    for (const auto& [name, var] : vars_) out[name] = g.grad(var);
    return out;
  }

  ParamStore<S>& store() const { return *store_; }

 private:
  ParamStore<S>* store_;
  std::unordered_map<std::string, ad::Var<S>> vars_;
};

// ---------------------------------------------------------------------------
// binary serialization (shared by checkpoints)

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), "checkpoint: unexpected end of stream");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  auto n = read_pod<std::uint32_t>(is);
  require(n < (1u << 24), "checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  require(static_cast<bool>(is), "checkpoint: unexpected end of stream");
  return s;
}

}  // namespace detail

// Entries are written in store order: name, rows, cols, flags, value
// [, adam_m, adam_v]. Element type is fixed by `wide` (f32 or f64).
template <typename S>
void write_store(std::ostream& os, const ParamStore<S>& store, bool wide,
                 bool with_optimizer) {
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(store.count()));
  for (const auto& p : store.all()) {
    detail::write_string(os, p.name);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rows()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.cols()));
    std::uint8_t flags = (p.decay ? 1 : 0) | (p.trainable ? 2 : 0);
    bool opt = with_optimizer && p.adam_m.size() != 0;
    flags |= opt ? 4 : 0;
    detail::write_pod<std::uint8_t>(os, flags);
    auto write_mat = [&](const Mat<S>& m) {
      if (wide) {
        Mat<double> d = m.template cast<double>();
        os.write(reinterpret_cast<const char*>(d.data()),
                 static_cast<std::streamsize>(sizeof(double) * d.size()));
      } else {
        Mat<float> f = m.template cast<float>();
        os.write(reinterpret_cast<const char*>(f.data()),
                 static_cast<std::streamsize>(sizeof(float) * f.size()));
      }
    };
    write_mat(p.value);
    if (opt) {
      write_mat(p.adam_m);
      write_mat(p.adam_v);
    }
  }
}

template <typename S>
ParamStore<S> read_store(std::istream& is, bool wide) {
  ParamStore<S> store;
  auto count = detail::read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::read_string(is);
    auto rows = detail::read_pod<std::uint32_t>(is);
    auto cols = detail::read_pod<std::uint32_t>(is);
    auto flags = detail::read_pod<std::uint8_t>(is);
    auto read_mat = [&]() {
      Mat<S> m(rows, cols);
      if (wide) {
        Mat<double> d(rows, cols);
        is.read(reinterpret_cast<char*>(d.data()),
                static_cast<std::streamsize>(sizeof(double) * d.size()));
        m = d.cast<S>();
      } else {
        Mat<float> f(rows, cols);
        is.read(reinterpret_cast<char*>(f.data()),
                static_cast<std::streamsize>(sizeof(float) * f.size()));
        m = f.cast<S>();
      }
      require(static_cast<bool>(is), "checkpoint: unexpected end of stream");
      return m;
    };
    auto& p = store.add(name, read_mat(), (flags & 1) != 0);
    p.trainable = (flags & 2) != 0;
    if (flags & 4) {
      p.adam_m = read_mat();
      p.adam_v = read_mat();
    }
  }
  return store;
}

}  // namespace goldi::model

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "blm/rng.hpp"
#include "blm/tape.hpp"

namespace blm {

// Owns a model's parameters, organized into named groups used for freeze
// masks, per-group learning rates and checkpointing.
class ParamStore {
 public:
  Param& create(const std::string& group, const std::string& name, int rows, int cols) {
    params_.push_back(std::make_unique<Param>(group + "." + name, Tensor(rows, cols)));
    groups_.push_back(group);
    return *params_.back();
  }

  Param& create_normal(const std::string& group, const std::string& name, int rows,
                       int cols, Rng& rng, double stddev) {
    Param& p = create(group, name, rows, cols);
    rng.fill_normal(p.value, stddev);
    return p;
  }

  Param& create_const(const std::string& group, const std::string& name, int rows,
                      int cols, double value) {
    Param& p = create(group, name, rows, cols);
    p.value.fill(value);
    return p;
  }

  std::vector<Param*> group(const std::string& g) const {
    std::vector<Param*> out;
    for (size_t i = 0; i < params_.size(); ++i)
      if (groups_[i] == g) out.push_back(params_[i].get());
    return out;
  }

  std::vector<Param*> groups(const std::vector<std::string>& gs) const {
    std::vector<Param*> out;
    for (const auto& g : gs)
      for (Param* p : group(g)) out.push_back(p);
    return out;
  }

  std::vector<Param*> all() const {
    std::vector<Param*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<std::string> group_names() const {
    std::vector<std::string> out;
    for (const auto& g : groups_)
      if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
    return out;
  }

  bool has_group(const std::string& g) const {
    return std::find(groups_.begin(), groups_.end(), g) != groups_.end();
  }

  Param* find(const std::string& full_name) const {
    for (const auto& p : params_)
      if (p->name == full_name) return p.get();
    return nullptr;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::vector<std::string> groups_;
};

// FNV-1a over the raw bytes of the parameter values; used by freeze-discipline
// checks and the frozen-teacher property.
uint64_t params_checksum(const std::vector<Param*>& params);

}  // namespace blm

#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kaqa/tensor.hpp"

namespace kaqa {

// Named, ordered collection of trainable leaf tensors.
class ModelParams {
 public:
  // Registers a new parameter; names are unique. Returns a handle sharing its storage.
  Tensor add(const std::string& name, Tensor value);
  Tensor add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);
  // Glorot-uniform init for a fan_in × fan_out matrix (or fan_in vector when fan_out == 1).
  Tensor add_glorot(const std::string& name, Shape shape, std::mt19937_64& rng);

  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t element_count() const;

  void zero_grad();

  // Post-backward gradient hooks (used to inject faults in tests and the CLI).
  void set_grad_hook(const std::string& name, std::function<void(std::span<double>)> hook);
  void apply_grad_hooks();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::vector<std::pair<std::string, std::function<void(std::span<double>)>>> hooks_;
};

// Checkpoint file layout (all text lines end in '\n'):
//
//   KAQA-CHECKPOINT 1
//   params <count>
//   <name> <rank> <dim0> ... <dim{rank-1}>      (one line per parameter)
//   data
//   <raw little-endian IEEE-754 float64 values, parameters in header order,
//    each row-major, no padding>
//
// Loading checks every name and shape against the target parameter set.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
void load_checkpoint(ModelParams& params, const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kaqa

#include "kaqa/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kaqa {

Tensor ModelParams::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  if (!value.is_leaf() || !value.requires_grad()) {
    throw std::invalid_argument("parameter '" + name + "' must be a leaf tensor requiring grad");
  }
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor ModelParams::add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ModelParams::add_glorot(const std::string& name, Shape shape, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(shape.at(0));
  const double fan_out = shape.size() > 1 ? static_cast<double>(shape[1]) : 1.0;
  return add_uniform(name, std::move(shape), std::sqrt(6.0 / (fan_in + fan_out)), rng);
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

Tensor& ModelParams::get(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter '" + name + "'");
}

const Tensor& ModelParams::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter '" + name + "'");
}

std::size_t ModelParams::element_count() const {
  std::size_t total = 0;
  for (const auto& [n, t] : entries_) total += t.size();
  return total;
}

void ModelParams::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

void ModelParams::set_grad_hook(const std::string& name, std::function<void(std::span<double>)> hook) {
  (void)get(name);
  hooks_.emplace_back(name, std::move(hook));
}

void ModelParams::apply_grad_hooks() {
  for (auto& [name, hook] : hooks_) {
    Tensor& t = get(name);
    if (t.has_grad()) hook(t.mutable_grad());
  }
}

namespace {

constexpr const char* kMagic = "KAQA-CHECKPOINT 1";

void write_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

double read_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << "params " << params.size() << '\n';
  for (const auto& [name, t] : params.entries()) {
    out << name << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
  }
  out << "data\n";
  for (const auto& [name, t] : params.entries())
    for (double v : t.data()) write_le(out, v);
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

void load_checkpoint(ModelParams& params, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMagic) throw CheckpointError(path.string() + ": not a checkpoint file");
  std::getline(in, line);
  std::istringstream count_line(line);
  std::string tag;
  std::size_t count = 0;
  if (!(count_line >> tag >> count) || tag != "params") throw CheckpointError(path.string() + ": bad header");
  std::vector<std::pair<std::string, Shape>> header;
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string name;
    std::size_t rank = 0;
    if (!(ls >> name >> rank)) throw CheckpointError(path.string() + ": bad parameter line '" + line + "'");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(ls >> d)) throw CheckpointError(path.string() + ": bad shape for '" + name + "'");
    header.emplace_back(name, shape);
  }
  std::getline(in, line);
  if (line != "data") throw CheckpointError(path.string() + ": missing data section");
  if (header.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(header.size()) + " parameters, model expects " +
                          std::to_string(params.size()));
  }
  for (const auto& [name, shape] : header) {
    if (!params.contains(name)) throw CheckpointError("checkpoint parameter '" + name + "' is not in the model");
    const Tensor& t = params.get(name);
    if (t.shape() != shape) {
      throw CheckpointError("parameter '" + name + "': checkpoint shape " + shape_str(shape) + ", model shape " +
                            shape_str(t.shape()));
    }
  }
  for (const auto& [name, shape] : header) {
    auto dst = params.get(name).mutable_data();
    for (auto& v : dst) v = read_le(in);
  }
  if (!in) throw CheckpointError(path.string() + ": truncated data section");
}

}  // namespace kaqa

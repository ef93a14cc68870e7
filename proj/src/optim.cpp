#include "dcnt/optim.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include "dcnt/errors.hpp"

namespace dcnt::ad {

const char* to_string(ParamGroup group) { return group == ParamGroup::backbone ? "backbone" : "head"; }

void zero_grad(ParameterList& params) {
  for (auto& p : params) p.tensor().zero_grad();
}

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_values()) v = dist(rng);
}

void SgdMomentum::step(ParameterList& params, double lr_backbone, double lr_head) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.tensor().numel(), 0.0);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.tensor().has_grad()) throw ContractError("sgd: parameter " + p.name() + " has no gradient");
    const double lr = p.group() == ParamGroup::backbone ? lr_backbone : lr_head;
    auto w = p.tensor().mutable_values();
    const auto g = p.tensor().grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] + weight_decay_ * w[i];
      w[i] -= lr * v[i];
    }
  }
}

double poly_lr(double initial, std::uint64_t iter, std::uint64_t max_iter, double power) {
  if (max_iter == 0) throw DomainError("poly_lr: max_iter must be positive");
  if (iter > max_iter) throw DomainError("poly_lr: iter exceeds max_iter");
  return initial * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

}  // namespace

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write("CKPT", 4);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name().size()));
    out.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
    put_u32(out, static_cast<std::uint32_t>(p.tensor().rank()));
    for (auto e : p.tensor().shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : p.tensor().values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  auto u32 = [&]() {
    if (pos + 4 > bytes.size()) throw SizeError("checkpoint truncated: " + path.string());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[pos + i]} << (8 * i);
    pos += 4;
    return v;
  };
  if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "CKPT") {
    throw FormatError("checkpoint: bad magic in " + path.string());
  }
  pos = 4;
  const std::uint32_t count = u32();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const std::uint32_t len = u32();
    if (pos + len > bytes.size()) throw SizeError("checkpoint truncated: " + path.string());
    e.name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    const std::uint32_t rank = u32();
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(u32());
    e.values.resize(shape_numel(e.shape));
    for (auto& v : e.values) v = std::bit_cast<float>(u32());
    entries.push_back(std::move(e));
  }
  if (pos != bytes.size()) throw SizeError("checkpoint has trailing bytes: " + path.string());
  return entries;
}

void load_checkpoint(ParameterList& params, const std::filesystem::path& path) {
  auto entries = read_checkpoint(path);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  if (by_name.size() != params.size()) {
    throw ContractError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name());
    if (it == by_name.end()) throw ContractError("checkpoint lacks parameter " + p.name());
    if (it->second->shape != p.tensor().shape()) {
      throw ContractError("checkpoint shape " + shape_str(it->second->shape) + " for " + p.name() +
                          " does not match model shape " + shape_str(p.tensor().shape()));
    }
    auto dst = p.tensor().mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = it->second->values[i];
  }
}

}  // namespace dcnt::ad

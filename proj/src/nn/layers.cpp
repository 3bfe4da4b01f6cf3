#include "bardip/nn/layers.hpp"
#include "bardip/common.hpp"
#include "bardip/io/container.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>

namespace bardip::nn {

std::vector<Tensor> tensors(const ParameterList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back(p.tensor);
  }
  return out;
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Buffer values(numel(shape));
  for (double& v : values) {
    v = u(rng);
  }
  return Tensor(std::move(shape), std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(kaiming_uniform({out, in}, in, rng)), bias(Shape{out}, 0.0, true) {}

void Linear::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng)
    : weight(kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      bias(Shape{out}, 0.0, true),
      padding(kernel / 2) {}

void Conv2d::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvTranspose2d::ConvTranspose2d(std::size_t in, std::size_t out, Rng& rng)
    : weight(kaiming_uniform({in, out, 2, 2}, in * 4, rng)), bias(Shape{out}, 0.0, true) {}

void ConvTranspose2d::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
  case Activation::relu:
    return relu(x);
  case Activation::leaky_relu:
    return leaky_relu(x, 0.01);
  case Activation::tanh:
    return tanh(x);
  case Activation::sigmoid:
    return sigmoid(x);
  }
  return x;
}

Mlp::Mlp(const std::vector<std::size_t>& sizes, Activation hidden, Rng& rng) : hidden_(hidden) {
  if (sizes.size() < 2) {
    throw std::invalid_argument("MLP needs at least input and output sizes");
  }
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers_.emplace_back(sizes[i], sizes[i + 1], rng);
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) {
      h = activate(h, hidden_);
    }
  }
  return h;
}

ParameterList Mlp::parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(out, fmt::format("{}.{}", prefix, i));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params) {
  io::BinaryWriter w(path, "MRFM");
  w.u64(params.size());
  for (const auto& p : params) {
    w.string(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) {
      w.u64(d);
    }
    w.f64s(p.tensor.values());
  }
  w.close();
}

void load_checkpoint(const std::filesystem::path& path, ParameterList& params) {
  io::BinaryReader r(path, "MRFM");
  const auto count = r.u64();
  std::map<std::string, Tensor*> by_name;
  for (auto& p : params) {
    by_name[p.name] = &p.tensor;
  }
  std::size_t matched = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.string();
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u64();
    }
    Buffer values(numel(shape));
    r.f64s(values);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError(fmt::format("{}: unexpected parameter '{}'", path.string(), name));
    }
    if (it->second->shape() != shape) {
      throw FormatError(fmt::format("{}: parameter '{}' has shape {}, model expects {}", path.string(), name,
                                    shape_string(shape), shape_string(it->second->shape())));
    }
    std::copy(values.begin(), values.end(), it->second->values().begin());
    ++matched;
  }
  r.expect_end();
  if (matched != params.size()) {
    throw FormatError(fmt::format("{}: holds {} of {} parameters", path.string(), matched, params.size()));
  }
}

} // namespace bardip::nn

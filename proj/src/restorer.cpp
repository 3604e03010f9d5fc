#include "nadapt/restorer.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <torch/torch.h>

#include "nadapt/error.hpp"
#include "nadapt/image.hpp"

namespace nadapt {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

constexpr std::array<VariantInfo, 3> kVariants{{
    {UnetVariant::T, "T", 32, 2'140'000},
    {UnetVariant::S, "S", 64, 8'560'000},
    {UnetVariant::B, "B", 76, 12'070'000},
}};

}  // namespace

const VariantInfo& variant_info(UnetVariant v) { return kVariants[static_cast<std::size_t>(v)]; }

UnetVariant variant_from_string(const std::string& s) {
  std::string key = s;
  if (key.rfind("Unet-", 0) == 0) key = key.substr(5);
  for (const auto& info : kVariants) {
    if (key == info.name) return info.variant;
  }
  throw ConfigError(fmt::format("unknown U-Net variant '{}' (expected T, S or B)", s));
}

std::string to_string(UnetVariant v) { return variant_info(v).name; }

RestorerImpl::RestorerImpl(UnetVariant variant, int in_channels) : variant_(variant), channels_(in_channels) {
  if (in_channels != 1 && in_channels != 3) throw ShapeError("build_restorer: in_channels must be 1 or 3");
  UNetOptions o;
  o.in_channels = in_channels;
  o.out_channels = in_channels;
  o.base_channels = variant_info(variant).base_channels;
  o.zero_head = true;
  net_ = register_module("unet", UNet(o));
}

RestorerOutput RestorerImpl::forward(const torch::Tensor& degraded) {
  auto residual = net_(degraded);
  return {residual, degraded + residual};
}

Restorer build_restorer(UnetVariant variant, int in_channels) { return Restorer(variant, in_channels); }

RestorerOutput restore(Restorer& net, const torch::Tensor& degraded) {
  auto x = degraded.dim() == 3 ? degraded.unsqueeze(0) : degraded;
  if (x.dim() != 4) throw ShapeError("restore: expected an (N, C, H, W) batch");
  require_finite(x, "restore");
  constexpr int m = UNetImpl::kSpatialMultiple;
  const auto h = x.size(2);
  const auto w = x.size(3);
  const auto ph = (m - h % m) % m;
  const auto pw = (m - w % m) % m;
  if (ph == 0 && pw == 0) return net->forward(x);
  if (ph >= h || pw >= w) throw ShapeError("restore: image too small for reflect padding");
  auto padded = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
  auto out = net->forward(padded);
  auto crop = [&](const torch::Tensor& t) { return t.slice(2, 0, h).slice(3, 0, w); };
  auto residual = crop(out.residual);
  return {residual, x + residual};
}

torch::Tensor charbonnier_loss(const torch::Tensor& pred, const torch::Tensor& target, double eps) {
  require_same_shape(pred, target, "charbonnier_loss");
  return torch::sqrt((pred - target).square() + eps * eps).mean();
}

// ---------------------------------------------------------------------------
// Archives
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "archives are written little-endian");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(IoErrc::read_failed, fmt::format("{}: truncated archive", path.string()));
  return v;
}

}  // namespace

void write_archive(const TensorArchive& archive, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrc::write_failed, fmt::format("cannot write {}", path.string()));
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto meta = archive.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint64_t>(out, archive.tensors.size());
  for (const auto& [name, tensor] : archive.tensors) {
    auto t = tensor.detach().to(torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    put<std::uint64_t>(out, nbytes);
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(nbytes));
  }
  if (!out) throw IoError(IoErrc::write_failed, fmt::format("write failed for {}", path.string()));
}

TensorArchive read_archive(const fs::path& path) {
  if (!fs::exists(path)) throw IoError(IoErrc::missing_file, fmt::format("no such checkpoint: {}", path.string()));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrc::read_failed, fmt::format("cannot open {}", path.string()));
  char magic[sizeof(kCheckpointMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError(IoErrc::unsupported_format, fmt::format("{} is not a NADAPT1 checkpoint", path.string()));
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError(IoErrc::unsupported_format, fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  }
  TensorArchive a;
  std::string meta(get<std::uint64_t>(in, path), '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  a.meta = nlohmann::json::parse(meta);
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = get<std::uint32_t>(in, path);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = get<std::int64_t>(in, path);
    const auto nbytes = get<std::uint64_t>(in, path);
    auto t = torch::empty(dims, torch::kFloat32);
    if (nbytes != static_cast<std::uint64_t>(t.numel()) * sizeof(float)) {
      throw IoError(IoErrc::read_failed, fmt::format("{}: size mismatch for tensor {}", path.string(), name));
    }
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError(IoErrc::read_failed, fmt::format("{}: truncated tensor {}", path.string(), name));
    a.tensors.emplace(std::move(name), std::move(t));
  }
  return a;
}

TensorArchive archive_module(const torch::nn::Module& m, nlohmann::json meta) {
  TensorArchive a;
  a.meta = std::move(meta);
  for (const auto& p : m.named_parameters()) a.tensors.emplace(p.key(), p.value().detach().clone());
  for (const auto& b : m.named_buffers()) a.tensors.emplace(b.key(), b.value().detach().clone());
  return a;
}

void restore_module(torch::nn::Module& m, const TensorArchive& archive) {
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    auto it = archive.tensors.find(name);
    if (it == archive.tensors.end()) throw ShapeError(fmt::format("checkpoint lacks tensor '{}'", name));
    if (it->second.sizes() != dst.sizes()) throw ShapeError(fmt::format("checkpoint shape mismatch for '{}'", name));
    dst.copy_(it->second);
  };
  for (auto& p : m.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : m.named_buffers()) copy_into(b.key(), b.value());
}

void save_restorer(const Restorer& net, const fs::path& path, const std::string& config_hash) {
  nlohmann::json meta{{"kind", "restorer"},
                      {"variant", to_string(net->variant())},
                      {"in_channels", net->channels()},
                      {"config_hash", config_hash}};
  write_archive(archive_module(*net, std::move(meta)), path);
}

Restorer load_restorer(const fs::path& path) {
  auto a = read_archive(path);
  if (a.meta.value("kind", "") != "restorer") {
    throw IoError(IoErrc::unsupported_format, fmt::format("{} does not hold a restorer", path.string()));
  }
  auto net = build_restorer(variant_from_string(a.meta.at("variant").get<std::string>()),
                            a.meta.at("in_channels").get<int>());
  restore_module(*net, a);
  net->eval();
  return net;
}

}  // namespace nadapt

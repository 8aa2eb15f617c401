#include "deeptransport/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "deeptransport/errors.hpp"

namespace deeptransport {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::string_view kAdamM = "adam.m/";
constexpr std::string_view kAdamV = "adam.v/";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void tensor(std::string_view name, const Tensor& t) {
    pod(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    pod(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) pod(static_cast<std::uint64_t>(e));
    out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <class T>
  T pod() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (n > (1u << 30)) fail("implausible field length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = bytes(pod<std::uint32_t>());
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) fail("implausible tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(pod<std::uint64_t>());
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 32)) fail("implausible tensor size");
    std::vector<double> data(n);
    read(reinterpret_cast<char*>(data.data()), n * sizeof(double));
    return {std::move(name), Tensor(std::move(shape), std::move(data))};
  }
  [[noreturn]] void fail(const std::string& what) const { throw DataError(path_ + ": " + what); }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated checkpoint");
  }
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest = ckpt.manifest;
  if (ckpt.adam) {
    const AdamConfig& c = ckpt.adam->config();
    manifest["adam"] = {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon},
                        {"steps", ckpt.adam->steps()}};
  }
  const std::string text = manifest.dump();

  // Write to a sibling temp file and rename so readers never see a torn file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    Writer w(out);
    w.bytes(std::string_view(kMagic, sizeof kMagic));
    w.pod(static_cast<std::uint64_t>(text.size()));
    w.bytes(text);
    const std::size_t n = ckpt.params.size();
    w.pod(static_cast<std::uint64_t>(ckpt.adam ? 3 * n : n));
    for (std::size_t i = 0; i < n; ++i) w.tensor(ckpt.params.name(i), ckpt.params.value(i));
    if (ckpt.adam) {
      for (std::size_t i = 0; i < n; ++i) w.tensor(std::string(kAdamM) + ckpt.params.name(i), ckpt.adam->first_moment(i));
      for (std::size_t i = 0; i < n; ++i)
        w.tensor(std::string(kAdamV) + ckpt.params.name(i), ckpt.adam->second_moment(i));
    }
    out.flush();
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) r.fail("not a checkpoint archive");

  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(r.bytes(r.pod<std::uint64_t>()));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad manifest: ") + e.what());
  }
  const auto entries = r.pod<std::uint64_t>();
  std::map<std::string, Tensor> m, v;
  for (std::uint64_t k = 0; k < entries; ++k) {
    auto [name, t] = r.tensor();
    if (name.starts_with(kAdamM)) {
      m.emplace(name.substr(kAdamM.size()), std::move(t));
    } else if (name.starts_with(kAdamV)) {
      v.emplace(name.substr(kAdamV.size()), std::move(t));
    } else {
      if (ckpt.params.find(name)) r.fail("duplicate entry " + name);
      ckpt.params.add(std::move(name), std::move(t));
    }
  }

  if (ckpt.manifest.contains("adam")) {
    const auto& a = ckpt.manifest["adam"];
    AdamConfig c;
    c.lr = a.at("lr");
    c.beta1 = a.at("beta1");
    c.beta2 = a.at("beta2");
    c.epsilon = a.at("epsilon");
    std::vector<Tensor> mv, vv;
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      auto mi = m.find(ckpt.params.name(i));
      auto vi = v.find(ckpt.params.name(i));
      if (mi == m.end() || vi == v.end()) r.fail("missing optimizer state for " + ckpt.params.name(i));
      mv.push_back(std::move(mi->second));
      vv.push_back(std::move(vi->second));
    }
    AdamState state(ckpt.params, c);
    state.restore(a.at("steps").get<std::size_t>(), std::move(mv), std::move(vv));
    ckpt.adam = std::move(state);
    ckpt.manifest.erase("adam");
  } else if (!m.empty() || !v.empty()) {
    r.fail("optimizer moments without optimizer manifest");
  }
  return ckpt;
}

std::uint64_t config_hash(const nlohmann::json& config) { return hash_string(config.dump()); }

}  // namespace deeptransport

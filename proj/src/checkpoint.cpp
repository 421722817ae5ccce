#include "kpgnn/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "kpgnn/random.hpp"

namespace kpgnn {

namespace {

constexpr char kMagic[8] = {'K', 'P', 'G', 'N', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str32(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }

  std::string str(std::uint64_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw ParseError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, m] : tensors) {
    put_str32(out, name);
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    for (double v : m.data()) put_f64(out, v);
  }
  put_u64(out, blobs.size());
  for (const auto& [key, bytes] : blobs) {
    put_str32(out, key);
    put_u64(out, bytes.size());
    out += bytes;
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) {
    throw ParseError("checkpoint: bad magic");
  }
  Reader r(bytes);
  r.str(sizeof kMagic);
  const auto version = r.u(4);
  if (version != kVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto nt = r.u(8);
  for (std::uint64_t k = 0; k < nt; ++k) {
    std::string name = r.str(r.u(4));
    const auto rows = r.u(8), cols = r.u(8);
    if (cols != 0 && rows > (bytes.size() / 8) / cols) throw ParseError("checkpoint: bad shape");
    std::vector<double> data(rows * cols);
    for (double& v : data) v = std::bit_cast<double>(r.u(8));
    ck.tensors.emplace(std::move(name), tensor::Matrix(rows, cols, std::move(data)));
  }
  const auto nb = r.u(8);
  for (std::uint64_t k = 0; k < nb; ++k) {
    std::string key = r.str(r.u(4));
    ck.blobs.emplace(std::move(key), r.str(r.u(8)));
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

const tensor::Matrix& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ParseError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::blob(const std::string& key) const {
  auto it = blobs.find(key);
  if (it == blobs.end()) throw ParseError("checkpoint: missing entry '" + key + "'");
  return it->second;
}

void store_parameters(Checkpoint& ckpt, const tensor::ParameterSet& params,
                      const std::string& prefix) {
  std::string order;
  for (const auto& p : params) {
    ckpt.tensors[prefix + p.name] = p.value;
    order += p.name + "\n";
  }
  ckpt.blobs[prefix + "order"] = order;
}

void store_adam(Checkpoint& ckpt, const tensor::AdamState& s, const std::string& prefix) {
  for (const auto& [name, m] : s.first_moment) ckpt.tensors[prefix + "m/" + name] = m;
  for (const auto& [name, v] : s.second_moment) ckpt.tensors[prefix + "v/" + name] = v;
  ckpt.tensors[prefix + "hyper"] =
      tensor::Matrix(1, 4, {s.learning_rate, s.beta1, s.beta2, s.epsilon});
  ckpt.blobs[prefix + "step"] = std::to_string(s.step);
}

tensor::ParameterSet load_parameters(const Checkpoint& ckpt, const std::string& prefix) {
  tensor::ParameterSet params;
  std::istringstream order(ckpt.blob(prefix + "order"));
  for (std::string name; std::getline(order, name);) {
    if (!name.empty()) params.push_back({name, ckpt.tensor(prefix + name)});
  }
  return params;
}

tensor::AdamState load_adam(const Checkpoint& ckpt, const std::string& prefix) {
  tensor::AdamState s;
  const auto& hyper = ckpt.tensor(prefix + "hyper");
  if (hyper.rows() != 1 || hyper.cols() != 4) throw ParseError("checkpoint: bad adam header");
  s.learning_rate = hyper(0, 0);
  s.beta1 = hyper(0, 1);
  s.beta2 = hyper(0, 2);
  s.epsilon = hyper(0, 3);
  s.step = std::stoull(ckpt.blob(prefix + "step"));
  for (const auto& [name, m] : ckpt.tensors) {
    if (name.rfind(prefix + "m/", 0) == 0) s.first_moment[name.substr(prefix.size() + 2)] = m;
    if (name.rfind(prefix + "v/", 0) == 0) s.second_moment[name.substr(prefix.size() + 2)] = m;
  }
  return s;
}

std::uint64_t parameter_hash(const tensor::ParameterSet& params) {
  Checkpoint ck;
  store_parameters(ck, params);
  return fnv1a(ck.serialize());
}

}  // namespace kpgnn

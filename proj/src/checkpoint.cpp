#include <bit>
#include <fstream>
#include <sstream>

#include "mdgfm/error.hpp"
#include "mdgfm/pretrain.hpp"

namespace mdgfm {
namespace {

constexpr char kMagic[4] = {'M', 'D', 'G', 'F'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void matrix(const DenseMatrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }
  void vector(const RowVector& v) { matrix(v); }
  void section(const char tag[4], const Writer& body) {
    buf_.append(tag, 4);
    u64(body.buf_.size());
    buf_ += body.buf_;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  bool done() const { return pos_ == data_.size(); }
  std::string_view take(std::size_t n) {
    if (data_.size() - pos_ < n) throw LoadError("checkpoint truncated in " + what_);
    const auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() { return std::string(take(u32())); }
  DenseMatrix matrix() {
    const auto rows = u64();
    const auto cols = u64();
    if (cols != 0 && rows > (data_.size() - pos_) / 8 / cols) throw LoadError("checkpoint truncated in " + what_);
    DenseMatrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
    return m;
  }
  RowVector vector() {
    DenseMatrix m = matrix();
    if (m.rows() != 1 && m.size() != 0) throw LoadError("checkpoint: expected a row vector in " + what_);
    return Eigen::Map<const RowVector>(m.data(), m.size());
  }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& cp) {
  Writer out;
  out.raw(kMagic, 4);
  out.u32(kCheckpointVersion);

  Writer conf;
  for (const auto& [k, v] : to_key_values(cp.config)) {
    const std::string line = k + "=" + v + "\n";
    conf.raw(line.data(), line.size());
  }
  out.section("CONF", conf);

  Writer doms;
  doms.u32(static_cast<std::uint32_t>(cp.source_domain_ids.size()));
  for (const auto& id : cp.source_domain_ids) {
    doms.str(id);
    doms.vector(cp.tokens.domain_tokens.at(id));
    doms.vector(cp.tokens.balance_tokens.at(id));
    const ProjectionBasis& b = cp.pca_bases.at(id);
    doms.vector(b.mean);
    doms.matrix(b.basis);
    doms.vector(b.explained_variance.transpose());
    doms.u64(static_cast<std::uint64_t>(b.target_dim));
  }
  out.section("DOMS", doms);

  Writer shrd;
  shrd.vector(cp.tokens.shared_token);
  out.section("SHRD", shrd);

  Writer encd;
  encd.u32(static_cast<std::uint32_t>(cp.encoder.weights.size()));
  encd.u8(cp.encoder.biases.empty() ? 0 : 1);
  for (const auto& w : cp.encoder.weights) encd.matrix(w);
  for (const auto& b : cp.encoder.biases) encd.vector(b);
  out.section("ENCD", encd);

  Writer head;
  head.matrix(cp.head.w0);
  head.matrix(cp.head.w1);
  out.section("HEAD", head);
  return out.bytes();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes, "header");
  const auto magic = in.take(4);
  if (magic != std::string_view(kMagic, 4)) throw LoadError("not a checkpoint file (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version: expected " + std::to_string(kCheckpointVersion) + ", found " +
                    std::to_string(version));
  }
  Checkpoint cp;
  bool have_conf = false, have_doms = false, have_shrd = false, have_encd = false, have_head = false;
  while (!in.done()) {
    const std::string tag(in.take(4));
    const std::uint64_t len = in.u64();
    Reader sec(in.take(len), tag + " section");
    if (tag == "CONF") {
      std::istringstream text{std::string(sec.take(len))};
      const KeyValues kv = parse_ini(text, "checkpoint config");
      ConfigReader reader(kv);
      try {
        cp.config = read_pretrain_config(reader);
        reader.require_all_used();
      } catch (const ConfigError& e) {
        throw LoadError(std::string("checkpoint config: ") + e.what());
      }
      have_conf = true;
    } else if (tag == "DOMS") {
      const std::uint32_t count = sec.u32();
      for (std::uint32_t i = 0; i < count; ++i) {
        const std::string id = sec.str();
        cp.source_domain_ids.push_back(id);
        cp.tokens.domain_tokens[id] = sec.vector();
        cp.tokens.balance_tokens[id] = sec.vector();
        ProjectionBasis b;
        b.mean = sec.vector();
        b.basis = sec.matrix();
        b.explained_variance = sec.vector().transpose();
        b.target_dim = static_cast<Index>(sec.u64());
        cp.pca_bases[id] = std::move(b);
      }
      have_doms = true;
    } else if (tag == "SHRD") {
      cp.tokens.shared_token = sec.vector();
      have_shrd = true;
    } else if (tag == "ENCD") {
      const std::uint32_t layers = sec.u32();
      const bool bias = sec.u8() != 0;
      for (std::uint32_t l = 0; l < layers; ++l) cp.encoder.weights.push_back(sec.matrix());
      if (bias) {
        for (std::uint32_t l = 0; l < layers; ++l) cp.encoder.biases.push_back(sec.vector());
      }
      have_encd = true;
    } else if (tag == "HEAD") {
      cp.head.w0 = sec.matrix();
      cp.head.w1 = sec.matrix();
      have_head = true;
    }
  }
  if (!(have_conf && have_doms && have_shrd && have_encd && have_head)) {
    throw LoadError("checkpoint truncated: missing sections");
  }
  return cp;
}

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(cp);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

std::uint64_t checkpoint_checksum(const Checkpoint& cp) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : serialize_checkpoint(cp)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace mdgfm

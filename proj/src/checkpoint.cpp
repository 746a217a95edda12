#include "ovdlab/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "ovdlab/errors.hpp"

namespace ovdlab {

namespace {

constexpr char kMagic[8] = {'O', 'V', 'D', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void matrix(const Matrix& m) {
    pod<std::int32_t>(m.rows());
    pod<std::int32_t>(m.cols());
    buf_.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t pos, std::size_t end) : buf_(buf), pos_(pos), end_(end) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto r = pod<std::int32_t>();
    const auto c = pod<std::int32_t>();
    if (r < 0 || c < 0) throw ParseError("checkpoint: negative tensor shape", pos_);
    const std::size_t n = static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
    need(n * sizeof(double));
    Matrix m(r, c);
    std::memcpy(m.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return m;
  }
  bool done() const { return pos_ == end_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw ParseError("checkpoint: truncated payload", pos_);
  }
  const std::string& buf_;
  std::size_t pos_;
  std::size_t end_;
};

struct Section {
  std::string fingerprint;
  std::map<std::string, Matrix> tensors;
};

struct Parsed {
  CheckpointMeta meta;
  std::vector<std::string> order;
  std::map<std::string, Section> sections;
  bool has_optimizer = false;
  std::map<std::string, AdamWSlot> slots;
};

Parsed parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (buf.size() < header + sizeof(std::uint64_t) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw ParseError("checkpoint: bad magic in " + path, 0);
  Reader head(buf, sizeof(kMagic), header);
  const auto version = head.pod<std::uint32_t>();
  if (version != kVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version), 8);
  const auto len = head.pod<std::uint64_t>();
  if (len != buf.size() - header - sizeof(std::uint64_t))
    throw ParseError("checkpoint: payload length does not match file size", 12);
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + header + len, sizeof(stored));
  if (fnv1a64(std::string_view(buf).substr(header, len)) != stored)
    throw ParseError("checkpoint: checksum mismatch in " + path, header);

  Reader r(buf, header, header + len);
  Parsed p;
  p.meta.step = r.pod<std::int32_t>();
  p.meta.iteration = r.pod<std::int64_t>();
  p.meta.seed = r.pod<std::uint64_t>();
  const auto nsec = r.pod<std::uint32_t>();
  for (std::uint32_t s = 0; s < nsec; ++s) {
    const auto name = r.str();
    Section sec;
    sec.fingerprint = r.str();
    const auto nt = r.pod<std::uint32_t>();
    for (std::uint32_t t = 0; t < nt; ++t) {
      auto tname = r.str();
      sec.tensors[tname] = r.matrix();
    }
    if (p.sections.count(name)) throw ParseError("checkpoint: duplicate section " + name, r.pos());
    p.order.push_back(name);
    p.sections[name] = std::move(sec);
  }
  p.has_optimizer = r.pod<std::uint8_t>() != 0;
  if (p.has_optimizer) {
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      auto name = r.str();
      AdamWSlot slot;
      slot.t = r.pod<std::int64_t>();
      slot.m = r.matrix();
      slot.v = r.matrix();
      p.slots[name] = std::move(slot);
    }
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes in payload", r.pos());
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const std::vector<StoreRef>& stores,
                     const AdamW* optimizer) {
  Writer w;
  w.pod<std::int32_t>(meta.step);
  w.pod<std::int64_t>(meta.iteration);
  w.pod<std::uint64_t>(meta.seed);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(stores.size()));
  for (const auto& s : stores) {
    w.str(s.section);
    w.str(s.fingerprint);
    const auto& params = s.store->params();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      w.str(p.name);
      w.matrix(p.var.value());
    }
  }
  w.pod<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    const auto& st = optimizer->state();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(st.size()));
    for (const auto& [name, slot] : st) {
      w.str(name);
      w.pod<std::int64_t>(slot.t);
      w.matrix(slot.m);
      w.matrix(slot.v);
    }
  }
  const std::string& payload = w.bytes();
  Writer file;
  file.bytes().append(kMagic, sizeof(kMagic));
  file.pod<std::uint32_t>(kVersion);
  file.pod<std::uint64_t>(payload.size());
  file.bytes() += payload;
  file.pod<std::uint64_t>(fnv1a64(payload));

  // Write beside the target and rename, so a crash never leaves half a file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(file.bytes().data(), static_cast<std::streamsize>(file.bytes().size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointMeta load_checkpoint(const std::string& path, const std::vector<StoreRef>& stores, AdamW* optimizer) {
  const auto p = parse_file(path);
  for (const auto& s : stores) {
    auto it = p.sections.find(s.section);
    if (it == p.sections.end()) throw CheckpointError("checkpoint " + path + " has no '" + s.section + "' section");
    if (it->second.fingerprint != s.fingerprint)
      throw CheckpointError("checkpoint section '" + s.section + "' was saved for " + it->second.fingerprint +
                            ", model is " + s.fingerprint);
    const auto& tensors = it->second.tensors;
    if (tensors.size() != s.store->params().size())
      throw CheckpointError("checkpoint section '" + s.section + "' has a different parameter set");
    for (const auto& param : s.store->params()) {
      auto t = tensors.find(param.name);
      if (t == tensors.end()) throw CheckpointError("checkpoint is missing parameter " + param.name);
      if (!t->second.same_shape(param.var.value())) throw CheckpointError("checkpoint shape mismatch for " + param.name);
    }
  }
  if (optimizer && !p.has_optimizer) throw CheckpointError("checkpoint " + path + " carries no optimizer state");

  for (const auto& s : stores) s.store->restore(p.sections.at(s.section).tensors);
  if (optimizer) optimizer->set_state(p.slots);
  return p.meta;
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
  const auto p = parse_file(path);
  CheckpointInfo info;
  info.meta = p.meta;
  info.sections = p.order;
  for (const auto& name : p.order) info.fingerprints.push_back(p.sections.at(name).fingerprint);
  info.has_optimizer = p.has_optimizer;
  return info;
}

}  // namespace ovdlab

#include "difftune/io.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace difftune {

namespace {

// All integers and doubles are written little-endian; this code assumes a
// little-endian host (checked at startup of the writer).
static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), tmp_(path + ".tmp"), out_(tmp_, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + tmp_ + " for writing");
  }

  void magic(const char m[4]) { out_.write(m, 4); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void f64_array(const std::vector<double>& a) {
    u64(a.size());
    if (!a.empty()) raw(a.data(), a.size() * sizeof(double));
  }

  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }

  void commit() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + tmp_);
    out_.close();
    std::filesystem::rename(tmp_, path_);
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  std::string path_, tmp_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path + " for reading");
  }

  void expect_magic(const char m[4]) {
    char buf[4] = {};
    raw(buf, 4, "magic");
    if (std::memcmp(buf, m, 4) != 0)
      fail("bad magic (expected " + std::string(m, 4) + ")");
  }

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v, "u32");
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v, "u64");
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v, "f64");
    return v;
  }

  std::vector<double> f64_array() {
    const std::uint64_t n = u64();
    std::vector<double> a(n);
    if (n) raw(a.data(), n * sizeof(double), "f64 array");
    return a;
  }

  std::string str() {
    const std::uint64_t n = u64();
    std::string s(n, '\0');
    if (n) raw(s.data(), n, "string");
    return s;
  }

  [[noreturn]] void fail(const std::string& what) {
    throw IoError(path_ + ": " + what + " at byte offset " +
                  std::to_string(offset_));
  }

 private:
  void raw(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      fail(std::string("truncated ") + what);
    offset_ += n;
  }
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  BinaryWriter w(path);
  w.magic("DFTN");
  w.u32(ck.version);
  w.u64(ck.config_hash);
  w.u64(ck.iteration);
  w.u32(static_cast<std::uint32_t>(ck.spec.sample_dim));
  w.u32(static_cast<std::uint32_t>(ck.spec.context_dim));
  w.u32(static_cast<std::uint32_t>(ck.spec.hidden.size()));
  for (std::size_t h : ck.spec.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.f64_array(ck.theta);
  w.f64_array(ck.theta_old);
  w.f64_array(ck.opt.m);
  w.f64_array(ck.opt.v);
  w.u64(ck.opt.t);
  w.u32(static_cast<std::uint32_t>(ck.rng_states.size()));
  for (const std::string& s : ck.rng_states) w.str(s);
  w.commit();
}

Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("DFTN");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1)
    r.fail("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config_hash = r.u64();
  ck.iteration = r.u64();
  ck.spec.sample_dim = r.u32();
  ck.spec.context_dim = r.u32();
  const std::uint32_t n_hidden = r.u32();
  ck.spec.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) ck.spec.hidden.push_back(r.u32());
  ck.theta = r.f64_array();
  ck.theta_old = r.f64_array();
  ck.opt.m = r.f64_array();
  ck.opt.v = r.f64_array();
  ck.opt.t = r.u64();
  const std::uint32_t n_rng = r.u32();
  for (std::uint32_t i = 0; i < n_rng; ++i) ck.rng_states.push_back(r.str());
  return ck;
}

void save_dataset(const std::string& path,
                  const std::vector<SceneSample>& data,
                  const std::string& meta_description) {
  BinaryWriter w(path);
  w.magic("DSET");
  w.u32(1);
  w.u64(data.size());
  const std::uint32_t dim =
      data.empty() ? 0 : static_cast<std::uint32_t>(data[0].x0.size());
  w.u32(dim);
  for (const SceneSample& s : data) {
    w.u32(static_cast<std::uint32_t>(s.ctx.kind));
    w.u32(static_cast<std::uint32_t>(s.ctx.object_a + 1));
    w.u32(static_cast<std::uint32_t>(s.ctx.object_b + 1));
    w.u32(static_cast<std::uint32_t>(s.ctx.relation + 1));
    w.u32(static_cast<std::uint32_t>(s.ctx.style + 1));
    w.u32(static_cast<std::uint32_t>(s.ctx.prompt + 1));
    w.u32(static_cast<std::uint32_t>(s.attr_bin + 1));
    for (double x : s.x0.data) w.f64(x);
  }
  w.commit();
  write_text_atomic(path + ".meta.txt", meta_description);
}

std::vector<SceneSample> load_dataset(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("DSET");
  const std::uint32_t version = r.u32();
  if (version != 1)
    r.fail("unsupported dataset version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  const std::uint32_t dim = r.u32();
  std::vector<SceneSample> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SceneSample s;
    s.ctx.kind = static_cast<TaskKind>(r.u32());
    s.ctx.object_a = static_cast<int>(r.u32()) - 1;
    s.ctx.object_b = static_cast<int>(r.u32()) - 1;
    s.ctx.relation = static_cast<int>(r.u32()) - 1;
    s.ctx.style = static_cast<int>(r.u32()) - 1;
    s.ctx.prompt = static_cast<int>(r.u32()) - 1;
    s.attr_bin = static_cast<int>(r.u32()) - 1;
    s.x0 = Tensor({dim});
    for (std::uint32_t d = 0; d < dim; ++d) s.x0.data[d] = r.f64();
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

const char* MetricsWriter::header() {
  return "iteration,task,mean_reward,loss_ppo,loss_pretrain,"
         "statistical_parity,detection_seen,detection_unseen,wall_seconds";
}

MetricsWriter::MetricsWriter(std::string path) : path_(std::move(path)) {}

void MetricsWriter::append(std::uint64_t iteration, const std::string& task,
                           double mean_reward, double loss_ppo,
                           double loss_pretrain, double statistical_parity,
                           double detection_seen, double detection_unseen,
                           double wall_seconds) {
  std::string row = std::to_string(iteration) + "," + task + "," +
                    format_double(mean_reward) + "," +
                    format_double(loss_ppo) + "," +
                    format_double(loss_pretrain) + "," +
                    format_double(statistical_parity) + "," +
                    format_double(detection_seen) + "," +
                    format_double(detection_unseen) + "," +
                    format_double(wall_seconds);
  rows_.push_back(std::move(row));
  flush();
}

void MetricsWriter::flush() const {
  std::string text = std::string(header()) + "\n";
  for (const std::string& r : rows_) text += r + "\n";
  write_text_atomic(path_, text);
}

}  // namespace difftune

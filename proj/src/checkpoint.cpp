#include "ttds/trainer.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace ttds {

namespace {

constexpr char kMagic[8] = {'T', 'T', 'D', 'S', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void mat(const Mat<float>& m) {
    i64(m.rows());
    i64(m.cols());
    raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  void section(const char tag[4], const Writer& body) {
    raw(tag, 4);
    u64(body.buf_.size());
    buf_ += body.buf_;
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  void raw(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename V>
  V get() {
    V v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  std::int64_t i64() { return get<std::int64_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const auto n = u64();
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint truncated");
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Mat<float> mat() {
    const auto r = i64(), c = i64();
    if (r < 0 || c < 0) throw CheckpointError("negative tensor shape in checkpoint");
    Mat<float> m(r, c);
    raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
    return m;
  }
  bool done() const { return pos_ == data_.size(); }
  std::string_view rest_view(std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint truncated");
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

template <typename Container>
void write_tensors(Writer& w, Container& c) {
  std::vector<std::pair<std::string, const Mat<float>*>> list;
  c.visit([&](const std::string& name, Mat<float>& m) { list.emplace_back(name, &m); });
  w.u64(list.size());
  for (const auto& [name, m] : list) {
    w.str(name);
    w.mat(*m);
  }
}

template <typename Container>
void read_tensors(Reader& r, Container& c, const std::string& what) {
  std::vector<std::pair<std::string, Mat<float>*>> list;
  c.visit([&](const std::string& name, Mat<float>& m) { list.emplace_back(name, &m); });
  const auto n = r.u64();
  if (n != list.size()) throw CheckpointError(what + ": tensor count mismatch");
  for (auto& [name, m] : list) {
    const std::string got = r.str();
    if (got != name) throw CheckpointError(what + ": expected tensor '" + name + "', found '" + got + "'");
    Mat<float> v = r.mat();
    if (v.rows() != m->rows() || v.cols() != m->cols()) throw CheckpointError(what + ": shape mismatch in " + name);
    *m = std::move(v);
  }
}

void write_tower_config(Writer& w, const TowerConfig& c) {
  w.i32(static_cast<std::int32_t>(c.tower));
  w.i32(c.levels);
  w.i32(c.codes);
  w.i32(c.code_dim);
  w.u64(c.widths.size());
  for (int x : c.widths) w.i32(x);
}

TowerConfig read_tower_config(Reader& r) {
  TowerConfig c;
  c.tower = static_cast<Tower>(r.i32());
  c.levels = r.i32();
  c.codes = r.i32();
  c.code_dim = r.i32();
  c.widths.resize(r.u64());
  for (auto& x : c.widths) x = r.i32();
  return c;
}

void write_assignment(Writer& w, const IndexAssignment& a) {
  w.i32(static_cast<std::int32_t>(a.tower));
  w.i32(a.epoch);
  w.u64(a.entities.size());
  for (std::size_t i = 0; i < a.entities.size(); ++i) {
    w.str(a.entities[i]);
    w.u64(a.ids[i].levels.size());
    for (int l : a.ids[i].levels) w.i32(l);
    w.i32(a.ids[i].suffix);
  }
}

IndexAssignment read_assignment(Reader& r) {
  IndexAssignment a;
  a.tower = static_cast<Tower>(r.i32());
  a.epoch = r.i32();
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    a.entities.push_back(r.str());
    SemanticId id;
    id.tower = a.tower;
    id.levels.resize(r.u64());
    for (auto& l : id.levels) l = r.i32();
    id.suffix = r.i32();
    a.ids.push_back(std::move(id));
  }
  return a;
}

}  // namespace

std::string serialize_checkpoint(const TrainState& s) {
  Writer out;
  out.raw(kMagic, sizeof kMagic);
  out.u32(kCheckpointVersion);

  Writer conf;
  conf.str(s.config_snapshot);
  out.section("CONF", conf);

  Writer stat;
  stat.str(s.stage);
  stat.i32(s.epochs_done);
  stat.i32(s.reindex_count);
  std::ostringstream rng;
  rng << s.rng;
  stat.str(rng.str());
  out.section("STAT", stat);

  Writer vocab;
  const auto& v = s.model.vocab;
  const auto& blk = v.semantic_block();
  vocab.i32(blk.offset), vocab.i32(blk.item_levels), vocab.i32(blk.item_codes);
  vocab.i32(blk.user_levels), vocab.i32(blk.user_codes), vocab.i32(blk.suffixes);
  vocab.u64(v.tokens().size());
  for (const auto& t : v.tokens()) vocab.str(t);
  out.section("VOCB", vocab);

  Writer bb;
  const auto& bc = s.model.backbone.config();
  bb.i32(bc.d_model), bb.i32(bc.layers), bb.i32(bc.heads), bb.i32(bc.max_len), bb.i32(bc.ffn_mult);
  bb.i32(s.model.backbone.vocab_size());
  write_tensors(bb, const_cast<BackboneParams<float>&>(s.model.backbone.params()));
  out.section("BKBN", bb);

  if (!s.model.quantizer.item.codebooks.empty()) {
    Writer q;
    write_tower_config(q, s.model.quantizer.item.config);
    write_tower_config(q, s.model.quantizer.user.config);
    write_tensors(q, const_cast<TwinTowerQuantizer<float>&>(s.model.quantizer));
    out.section("QUAN", q);
  }
  if (!s.model.item_ids.entities.empty()) {
    Writer a;
    write_assignment(a, s.model.item_ids);
    write_assignment(a, s.model.user_ids);
    out.section("IDXS", a);
  }

  Writer opt;
  const auto& oc = s.optimizer.config();
  opt.f64(oc.beta1), opt.f64(oc.beta2), opt.f64(oc.eps), opt.f64(oc.weight_decay);
  opt.i64(s.optimizer.steps());
  opt.u64(s.optimizer.first_moments().size());
  for (std::size_t i = 0; i < s.optimizer.first_moments().size(); ++i) {
    opt.mat(s.optimizer.first_moments()[i]);
    opt.mat(s.optimizer.second_moments()[i]);
  }
  out.section("OPTM", opt);

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.bytes().data()), static_cast<uInt>(out.bytes().size())));
  out.u32(crc);
  return std::move(out.bytes());
}

TrainState deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint file (bad magic or too short)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  const auto crc = static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
  if (crc != stored) throw CheckpointError("checkpoint checksum mismatch (file truncated or corrupted)");

  Reader r(std::string_view(bytes.data(), body));
  char magic[8];
  r.raw(magic, 8);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");

  TrainState s;
  std::map<std::string, std::string_view> sections;
  while (!r.done()) {
    char tag[4];
    r.raw(tag, 4);
    const auto len = r.u64();
    sections[std::string(tag, 4)] = r.rest_view(len);
  }
  auto need = [&](const char* tag) {
    auto it = sections.find(tag);
    if (it == sections.end()) throw CheckpointError(std::string("checkpoint lacks section ") + tag);
    return Reader(it->second);
  };

  s.config_snapshot = need("CONF").str();
  {
    Reader st = need("STAT");
    s.stage = st.str();
    s.epochs_done = st.i32();
    s.reindex_count = st.i32();
    std::istringstream rng(st.str());
    rng >> s.rng;
  }
  {
    Reader vr = need("VOCB");
    SemanticBlock blk;
    blk.offset = vr.i32(), blk.item_levels = vr.i32(), blk.item_codes = vr.i32();
    blk.user_levels = vr.i32(), blk.user_codes = vr.i32(), blk.suffixes = vr.i32();
    std::vector<std::string> tokens(vr.u64());
    for (auto& t : tokens) t = vr.str();
    s.model.vocab = Vocabulary::from_tokens(std::move(tokens), blk);
  }
  {
    Reader br = need("BKBN");
    BackboneConfig bc;
    bc.d_model = br.i32(), bc.layers = br.i32(), bc.heads = br.i32(), bc.max_len = br.i32(), bc.ffn_mult = br.i32();
    const int vsize = br.i32();
    s.model.backbone = Backbone<float>(bc, vsize, 0);
    read_tensors(br, s.model.backbone.params(), "backbone");
  }
  if (sections.count("QUAN")) {
    Reader qr = need("QUAN");
    const TowerConfig ic = read_tower_config(qr), uc = read_tower_config(qr);
    s.model.quantizer.item = TowerQuantizer<float>(ic, 0);
    s.model.quantizer.user = TowerQuantizer<float>(uc, 0);
    read_tensors(qr, s.model.quantizer, "quantizer");
  }
  if (sections.count("IDXS")) {
    Reader ar = need("IDXS");
    s.model.item_ids = read_assignment(ar);
    s.model.user_ids = read_assignment(ar);
  }
  {
    Reader orr = need("OPTM");
    AdamWConfig oc;
    oc.beta1 = orr.f64(), oc.beta2 = orr.f64(), oc.eps = orr.f64(), oc.weight_decay = orr.f64();
    s.optimizer = AdamW<float>(oc);
    const auto steps = orr.i64();
    std::vector<Mat<float>> m, v;
    const auto n = orr.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      m.push_back(orr.mat());
      v.push_back(orr.mat());
    }
    s.optimizer.restore(steps, std::move(m), std::move(v));
  }
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write on checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace ttds

#include "itss/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "itss/errors.hpp"

namespace itss::io {

namespace {

constexpr char kMagic[4] = {'I', 'T', 'S', 'S'};
constexpr std::uint32_t kVersion = 1;

enum Kind : std::uint8_t { kTrajectory = 1, kBasis = 2, kState = 3 };

// ---------------------------------------------------------------------------
// CRC32 (IEEE 802.3, reflected, polynomial 0xEDB88320)
// ---------------------------------------------------------------------------

const std::uint32_t* crc_table() {
  static std::uint32_t table[256];
  static bool built = false;
  if (!built) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int bit = 0; bit < 8; ++bit)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    built = true;
  }
  return table;
}

struct Writer {
  std::vector<std::uint8_t> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf.insert(buf.end(), p, p + len);
  }
  void doubles(const std::vector<double>& values) {
    for (double v : values) f64(v);
  }
};

struct Reader {
  std::vector<std::uint8_t> buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw ArtifactError("artifact truncated");
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), len);
    pos += len;
    return s;
  }
  std::vector<double> doubles(std::size_t count) {
    std::vector<double> out(count);
    for (double& v : out) v = f64();
    return out;
  }
};

void write_layout(Writer& w, const nn::LayerLayout& layout) {
  w.u64(layout.layer_id);
  w.u32(static_cast<std::uint32_t>(layout.tensors.size()));
  for (const auto& t : layout.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t s : t.shape) w.u64(s);
  }
}

nn::LayerLayout read_layout(Reader& r) {
  nn::LayerLayout layout;
  layout.layer_id = r.u64();
  const std::uint32_t count = r.u32();
  std::size_t offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    nn::TensorInfo t;
    t.name = r.string(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.u64());
    t.offset = offset;
    offset += t.size();
    layout.tensors.push_back(std::move(t));
  }
  return layout;
}

void write_file(const std::filesystem::path& path, Writer& w) {
  const std::uint32_t checksum = crc32(w.buf.data(), w.buf.size());
  w.u32(checksum);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.buf.data()),
            static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw ArtifactError("short write to " + path.string());
}

Reader read_file(const std::filesystem::path& path, Kind expected_kind,
                 nlohmann::json& meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  Reader r;
  r.buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

  if (r.buf.size() < 4 + 4 + 1 + 4 + 4) throw ArtifactError("artifact truncated");
  const std::size_t body = r.buf.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(r.buf[body + i]) << (8 * i);
  if (crc32(r.buf.data(), body) != stored)
    throw ArtifactError("checksum mismatch in " + path.string());
  r.buf.resize(body);

  if (std::memcmp(r.buf.data(), kMagic, 4) != 0)
    throw ArtifactError("bad magic in " + path.string());
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw ArtifactError("unsupported artifact version " + std::to_string(version) +
                        " in " + path.string());
  const std::uint8_t kind = r.u8();
  if (kind != expected_kind)
    throw ArtifactError("artifact kind mismatch in " + path.string());
  const std::uint32_t meta_len = r.u32();
  const std::string meta_str = r.string(meta_len);
  meta = meta_str.empty() ? nlohmann::json::object()
                          : nlohmann::json::parse(meta_str, nullptr, false);
  if (meta.is_discarded()) throw ArtifactError("corrupt metadata in " + path.string());
  return r;
}

void write_header(Writer& w, Kind kind, const nlohmann::json& meta) {
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u8(kind);
  const std::string meta_str = meta.dump();
  w.u32(static_cast<std::uint32_t>(meta_str.size()));
  w.bytes(meta_str.data(), meta_str.size());
}

nlohmann::json config_to_json(const train::TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"optimizer", train::to_string(cfg.optimizer)},
          {"base_lr", cfg.base_lr},
          {"seed", cfg.seed},
          {"checkpoint_every", cfg.checkpoint_every}};
}

train::TrainConfig config_from_json(const nlohmann::json& j) {
  train::TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.optimizer = train::optimizer_from_string(
      j.value("optimizer", train::to_string(cfg.optimizer)));
  cfg.base_lr = j.value("base_lr", cfg.base_lr);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  return cfg;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  const std::uint32_t* table = crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_trajectory(const train::Trajectory& traj, const std::filesystem::path& path) {
  Writer w;
  write_header(w, kTrajectory,
               {{"task_id", traj.task_id}, {"config", config_to_json(traj.config)}});
  w.u32(static_cast<std::uint32_t>(traj.layouts.size()));
  for (std::size_t l = 0; l < traj.layouts.size(); ++l) {
    write_layout(w, traj.layouts[l]);
    w.u64(traj.origin[l].size());
    w.doubles(traj.origin[l]);
    w.u64(traj.checkpoints.size());
    for (const auto& cp : traj.checkpoints) w.doubles(cp[l]);
  }
  write_file(path, w);
}

train::Trajectory load_trajectory(const std::filesystem::path& path) {
  nlohmann::json meta;
  Reader r = read_file(path, kTrajectory, meta);
  train::Trajectory traj;
  traj.task_id = meta.value("task_id", "");
  traj.config = config_from_json(meta.value("config", nlohmann::json::object()));
  const std::uint32_t layers = r.u32();
  std::size_t steps = 0;
  for (std::uint32_t l = 0; l < layers; ++l) {
    traj.layouts.push_back(read_layout(r));
    const std::uint64_t d = r.u64();
    traj.origin.push_back(r.doubles(d));
    const std::uint64_t t = r.u64();
    if (l == 0) {
      steps = t;
      traj.checkpoints.resize(steps);
    } else if (t != steps) {
      throw ArtifactError("inconsistent checkpoint counts in " + path.string());
    }
    for (std::size_t i = 0; i < steps; ++i) traj.checkpoints[i].push_back(r.doubles(d));
  }
  return traj;
}

void save_basis(const subspace::SubspaceBasis& basis, const std::filesystem::path& path) {
  Writer w;
  write_header(w, kBasis,
               {{"dim", basis.dim},
                {"source",
                 {{"kind", subspace::to_string(basis.source.kind)},
                  {"task_id", basis.source.task_id},
                  {"seed", basis.source.seed},
                  {"tasks", basis.source.tasks}}}});
  w.u32(static_cast<std::uint32_t>(basis.layouts.size()));
  for (std::size_t l = 0; l < basis.layouts.size(); ++l) {
    write_layout(w, basis.layouts[l]);
    const auto& v = basis.directions[l];
    w.u64(v.rows);
    w.u64(v.cols);
    w.doubles(basis.origin[l]);
    w.doubles(basis.singular_values[l]);
    w.doubles(v.data);
  }
  write_file(path, w);
}

subspace::SubspaceBasis load_basis(const std::filesystem::path& path) {
  nlohmann::json meta;
  Reader r = read_file(path, kBasis, meta);
  subspace::SubspaceBasis basis;
  basis.dim = meta.value("dim", 0u);
  const auto source = meta.value("source", nlohmann::json::object());
  basis.source.kind = subspace::basis_kind_from_string(source.value("kind", "intrinsic"));
  basis.source.task_id = source.value("task_id", "");
  basis.source.seed = source.value("seed", 0u);
  basis.source.tasks = source.value("tasks", std::vector<std::string>{});
  const std::uint32_t layers = r.u32();
  for (std::uint32_t l = 0; l < layers; ++l) {
    basis.layouts.push_back(read_layout(r));
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    basis.origin.push_back(r.doubles(rows));
    basis.singular_values.push_back(r.doubles(cols));
    linalg::Matrix v(rows, cols);
    v.data = r.doubles(rows * cols);
    basis.directions.push_back(std::move(v));
  }
  return basis;
}

void save_state(const subspace::LowDimState& state,
                const std::vector<nn::LayerLayout>& layouts,
                const std::filesystem::path& path) {
  if (layouts.size() != state.coords.size())
    throw ShapeError("save_state: layouts do not match the state");
  Writer w;
  write_header(w, kState, {{"ensemble", state.ensemble}});
  w.u32(static_cast<std::uint32_t>(layouts.size()));
  for (std::size_t l = 0; l < layouts.size(); ++l) {
    write_layout(w, layouts[l]);
    w.u64(state.coords[l].size());
    w.u64(state.coords[l].empty() ? 0 : state.coords[l][0].size());
    for (const auto& member : state.coords[l]) w.doubles(member);
  }
  write_file(path, w);
}

std::pair<subspace::LowDimState, std::vector<nn::LayerLayout>> load_state(
    const std::filesystem::path& path) {
  nlohmann::json meta;
  Reader r = read_file(path, kState, meta);
  subspace::LowDimState state;
  state.ensemble = meta.value("ensemble", 1u);
  std::vector<nn::LayerLayout> layouts;
  const std::uint32_t layers = r.u32();
  for (std::uint32_t l = 0; l < layers; ++l) {
    layouts.push_back(read_layout(r));
    const std::uint64_t members = r.u64();
    const std::uint64_t dim = r.u64();
    std::vector<std::vector<double>> coords(members);
    for (auto& member : coords) member = r.doubles(dim);
    state.coords.push_back(std::move(coords));
  }
  return {std::move(state), std::move(layouts)};
}

}  // namespace itss::io

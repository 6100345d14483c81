#include "mmdino/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mmdino {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr const char* kDtype = sizeof(Real) == 8 ? "F64" : "F32";

struct Entry {
  std::string name;
  std::vector<int> shape;
  const Real* data;
  size_t count;
};

std::vector<Entry> entries(const ParamLayout& layout, const TrainerState& s) {
  std::vector<Entry> out;
  const std::pair<const char*, const ParamVector*> buffers[] = {
      {"student/", &s.model.student}, {"teacher/", &s.model.teacher}, {"optim.m/", &s.optim.m}, {"optim.v/", &s.optim.v}};
  for (const auto& [prefix, buf] : buffers) {
    layout.check(*buf);
    for (const auto& t : layout.tensors()) out.push_back({prefix + t.name, t.shape, buf->data() + t.offset, t.size});
  }
  out.push_back({"center", {static_cast<int>(s.model.center.size())}, s.model.center.data(),
                 static_cast<size_t>(s.model.center.size())});
  return out;
}

struct Parsed {
  json header;
  std::vector<char> payload;
};

Parsed read_file(const fs::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  if (!in || n > (1ull << 30)) throw DataError(path.string() + ": not a checkpoint file");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError(path.string() + ": truncated header");
  Parsed p;
  try {
    p.header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (with_payload) p.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return p;
}

std::string metadata(const json& header, const char* key) {
  const auto& meta = header.at("__metadata__");
  if (!meta.contains(key)) throw DataError(std::string("checkpoint metadata lacks ") + key);
  return meta.at(key).get<std::string>();
}

}  // namespace

void save_checkpoint(const fs::path& path, const ParamLayout& layout, const TrainerState& state,
                     const std::string& config_text) {
  const auto list = entries(layout, state);
  std::ostringstream steps;
  for (size_t i = 0; i < state.optim.steps.size(); ++i) steps << (i ? "," : "") << state.optim.steps[i];

  json header = json::object();
  header["__metadata__"] = {{"format", "mmdino-checkpoint"},
                            {"step", std::to_string(state.step)},
                            {"optim_steps", steps.str()},
                            {"ema_momentum", std::to_string(state.model.ema_momentum)},
                            {"config", config_text}};
  size_t offset = 0;
  for (const auto& e : list) {
    const size_t bytes = e.count * sizeof(Real);
    header[e.name] = {{"dtype", kDtype}, {"shape", e.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');  // keep the payload 8-byte aligned
  const std::uint64_t n = text.size();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(text.data(), static_cast<std::streamsize>(n));
    for (const auto& e : list)
      out.write(reinterpret_cast<const char*>(e.data), static_cast<std::streamsize>(e.count * sizeof(Real)));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const ParamLayout& layout) {
  const Parsed p = read_file(path, true);
  Checkpoint ck;
  try {
    if (metadata(p.header, "format") != "mmdino-checkpoint") throw DataError(path.string() + ": unknown format");
    ck.config_text = metadata(p.header, "config");
    auto& s = ck.state;
    s.step = std::stoll(metadata(p.header, "step"));
    s.model.ema_momentum = std::stod(metadata(p.header, "ema_momentum"));
    s.model.student.assign(layout.total(), 0);
    s.model.teacher.assign(layout.total(), 0);
    s.optim = AdamWState::zeros(layout);
    {
      std::istringstream in(metadata(p.header, "optim_steps"));
      std::string tok;
      size_t i = 0;
      while (std::getline(in, tok, ',')) {
        if (i >= s.optim.steps.size()) throw DataError("optimizer step counters do not match the layout");
        s.optim.steps[i++] = std::stoll(tok);
      }
      if (i != s.optim.steps.size()) throw DataError("optimizer step counters do not match the layout");
    }

    auto read = [&](const std::string& name, const std::vector<int>& shape, Real* dst, size_t count) {
      if (!p.header.contains(name)) throw DataError(path.string() + ": missing tensor " + name);
      const auto& h = p.header.at(name);
      if (h.at("shape").get<std::vector<int>>() != shape) throw DataError(path.string() + ": shape mismatch for " + name);
      const std::string dtype = h.at("dtype").get<std::string>();
      const auto off = h.at("data_offsets").get<std::vector<size_t>>();
      const size_t width = dtype == "F64" ? 8 : dtype == "F32" ? 4 : 0;
      if (!width) throw DataError(path.string() + ": unsupported dtype " + dtype);
      if (off.size() != 2 || off[1] - off[0] != count * width || off[1] > p.payload.size())
        throw DataError(path.string() + ": bad offsets for " + name);
      const char* src = p.payload.data() + off[0];
      for (size_t i = 0; i < count; ++i) {
        if (width == 8) {
          double v;
          std::memcpy(&v, src + 8 * i, 8);
          dst[i] = static_cast<Real>(v);
        } else {
          float v;
          std::memcpy(&v, src + 4 * i, 4);
          dst[i] = static_cast<Real>(v);
        }
      }
    };
    const std::pair<const char*, ParamVector*> buffers[] = {
        {"student/", &s.model.student}, {"teacher/", &s.model.teacher}, {"optim.m/", &s.optim.m}, {"optim.v/", &s.optim.v}};
    for (const auto& [prefix, buf] : buffers)
      for (const auto& t : layout.tensors()) read(prefix + t.name, t.shape, buf->data() + t.offset, t.size);
    const auto center_shape = p.header.at("center").at("shape").get<std::vector<int>>();
    if (center_shape.size() != 1) throw DataError(path.string() + ": center must be a vector");
    s.model.center = Vec::Zero(center_shape[0]);
    read("center", center_shape, s.model.center.data(), center_shape[0]);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(path.string() + ": malformed metadata: " + e.what());
  }
  return ck;
}

std::string checkpoint_config(const fs::path& path) {
  const Parsed p = read_file(path, false);
  try {
    return metadata(p.header, "config");
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
}

}  // namespace mmdino

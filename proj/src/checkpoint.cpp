#include "depthforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace df {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t take_u64(const std::vector<unsigned char>& buf, std::size_t off, const std::string& what) {
  if (off + 8 > buf.size())
    throw IoError("checkpoint truncated: " + what + " needs 8 bytes at offset " +
                  std::to_string(off) + ", file has " + std::to_string(buf.size()));
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(buf[off + i]) << (8 * i);
  return v;
}

const unsigned char* take_bytes(const std::vector<unsigned char>& buf, std::size_t off,
                                std::size_t len, const std::string& what) {
  if (off + len > buf.size())
    throw IoError("checkpoint truncated: " + what + " needs " + std::to_string(len) +
                  " bytes at offset " + std::to_string(off) + ", file has " +
                  std::to_string(buf.size()));
  return buf.data() + off;
}

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(t.numel());
  auto vals = t.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(vals[i]);
  return out;
}

nlohmann::json parse_json(const unsigned char* data, std::size_t len, const std::string& what) {
  try {
    return nlohmann::json::parse(data, data + len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed " + what + " JSON: " + e.what());
  }
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return buf;
}

struct Parsed {
  nlohmann::json manifest;
  std::size_t payload_off = 0;   // f32 section start
  std::size_t payload_len = 0;   // bytes
  std::size_t state_off = 0;     // past the payload
};

Parsed parse_header(const std::vector<unsigned char>& buf, const std::string& path) {
  const unsigned char* magic = take_bytes(buf, 0, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: " + path + " has unsupported magic/version (want DFCKPT01)");
  uint64_t mlen = take_u64(buf, 8, "manifest length");
  const unsigned char* mdata = take_bytes(buf, 16, mlen, "manifest");
  Parsed p;
  p.manifest = parse_json(mdata, mlen, "manifest");
  p.payload_off = 16 + mlen;
  try {
    p.payload_len = p.manifest.at("payload_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed manifest in " + path + ": " + e.what());
  }
  take_bytes(buf, p.payload_off, p.payload_len, "parameter payload");
  p.state_off = p.payload_off + p.payload_len;
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config, const OptimState* optim,
                     const std::string& rng_state) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = config;
  manifest["train_state"] = (optim != nullptr);

  std::vector<float> payload;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : store.all()) {
    std::vector<float> f = to_f32(p.tensor);
    nlohmann::json entry;
    entry["name"] = p.name;
    entry["rows"] = p.tensor.rows();
    entry["cols"] = p.tensor.cols();
    entry["offset"] = payload.size() * sizeof(float);
    entry["trainable"] = p.trainable;
    entry["sha256"] = sha256_hex(f.data(), f.size() * sizeof(float));
    params.push_back(std::move(entry));
    payload.insert(payload.end(), f.begin(), f.end());
  }
  manifest["params"] = std::move(params);
  manifest["payload_bytes"] = payload.size() * sizeof(float);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 8);
  std::string mstr = manifest.dump();
  put_u64(out, mstr.size());
  out.write(mstr.data(), std::streamsize(mstr.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(float)));

  if (optim) {
    nlohmann::json state;
    state["step"] = optim->step;
    state["rng_state"] = rng_state;
    state["trainable_tensors"] = optim->names.size();
    std::string sstr = state.dump();
    put_u64(out, sstr.size());
    out.write(sstr.data(), std::streamsize(sstr.size()));
    for (const auto& p : store.all()) {
      auto vals = p.tensor.values();
      out.write(reinterpret_cast<const char*>(vals.data()),
                std::streamsize(vals.size() * sizeof(double)));
    }
    // Moments follow store order; OptimState::init builds names the same way.
    for (const auto& m : optim->m)
      out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
    for (const auto& v : optim->v)
      out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
  auto buf = slurp(path);
  Parsed p = parse_header(buf, path);
  try {
    CheckpointInfo info;
    info.config = p.manifest.at("config");
    info.has_train_state = p.manifest.at("train_state").get<bool>();
    if (info.has_train_state) {
      uint64_t slen = take_u64(buf, p.state_off, "state length");
      auto state = parse_json(take_bytes(buf, p.state_off + 8, slen, "state"), slen, "state");
      info.step = state.at("step").get<uint64_t>();
      info.rng_state = state.at("rng_state").get<std::string>();
    }
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed manifest in " + path + ": " + e.what());
  }
}

CheckpointInfo load_checkpoint(const std::string& path, ParamStore& store, OptimState* optim) {
  auto buf = slurp(path);
  Parsed p = parse_header(buf, path);
  try {
    if (p.manifest.at("version").get<int>() != 1)
      throw IoError("checkpoint: unsupported manifest version in " + path);

    const auto& params = p.manifest.at("params");
    if (params.size() != store.size())
      throw IoError("checkpoint: manifest lists " + std::to_string(params.size()) +
                    " parameters, model has " + std::to_string(store.size()));

    // Pass 1: verify the whole manifest against the store and the payload
    // checksums before touching any value.
    for (const auto& entry : params) {
      const auto name = entry.at("name").get<std::string>();
      if (!store.contains(name)) throw IoError("checkpoint: model has no parameter " + name);
      const Parameter& par = store.get(name);
      std::size_t rows = entry.at("rows").get<std::size_t>();
      std::size_t cols = entry.at("cols").get<std::size_t>();
      if (rows != par.tensor.rows() || cols != par.tensor.cols())
        throw IoError("checkpoint: shape mismatch for " + name + ": file " + std::to_string(rows) +
                      "x" + std::to_string(cols) + ", model " + std::to_string(par.tensor.rows()) +
                      "x" + std::to_string(par.tensor.cols()));
      if (entry.at("trainable").get<bool>() != par.trainable)
        throw IoError("checkpoint: trainable flag mismatch for " + name);
      std::size_t off = entry.at("offset").get<std::size_t>();
      std::size_t len = par.tensor.numel() * sizeof(float);
      const unsigned char* data = take_bytes(buf, p.payload_off + off, len, "payload of " + name);
      if (sha256_hex(data, len) != entry.at("sha256").get<std::string>())
        throw IoError("checkpoint: checksum mismatch for " + name + " (corrupted payload)");
    }

    CheckpointInfo info;
    info.config = p.manifest.at("config");
    info.has_train_state = p.manifest.at("train_state").get<bool>();

    // Pass 2: apply. Prefer the f64 masters when present so resume is exact.
    if (info.has_train_state) {
      uint64_t slen = take_u64(buf, p.state_off, "state length");
      auto state = parse_json(take_bytes(buf, p.state_off + 8, slen, "state"), slen, "state");
      info.step = state.at("step").get<uint64_t>();
      info.rng_state = state.at("rng_state").get<std::string>();

      std::size_t off = p.state_off + 8 + slen;
      for (const auto& entry : params) {
        Parameter& par = store.get(entry.at("name").get<std::string>());
        std::size_t len = par.tensor.numel() * sizeof(double);
        const unsigned char* data = take_bytes(buf, off, len, "masters of " + par.name);
        std::memcpy(par.tensor.values().data(), data, len);
        off += len;
      }
      if (optim) {
        optim->init(store);
        optim->step = info.step;
        std::size_t expect = state.at("trainable_tensors").get<std::size_t>();
        if (expect != optim->names.size())
          throw IoError("checkpoint: " + std::to_string(expect) +
                        " moment tensors on file, model has " + std::to_string(optim->names.size()));
        for (auto& m : optim->m) {
          std::size_t len = m.size() * sizeof(double);
          std::memcpy(m.data(), take_bytes(buf, off, len, "first moments"), len);
          off += len;
        }
        for (auto& v : optim->v) {
          std::size_t len = v.size() * sizeof(double);
          std::memcpy(v.data(), take_bytes(buf, off, len, "second moments"), len);
          off += len;
        }
      }
    } else {
      if (optim)
        throw IoError("checkpoint: " + path + " carries no training state; cannot resume from it");
      for (const auto& entry : params) {
        Parameter& par = store.get(entry.at("name").get<std::string>());
        std::size_t off = entry.at("offset").get<std::size_t>();
        std::size_t len = par.tensor.numel() * sizeof(float);
        const unsigned char* data =
            take_bytes(buf, p.payload_off + off, len, "payload of " + par.name);
        auto vals = par.tensor.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
          float f;
          std::memcpy(&f, data + i * sizeof(float), sizeof(float));
          vals[i] = double(f);
        }
      }
    }
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed manifest in " + path + ": " + e.what());
  }
}

}  // namespace df

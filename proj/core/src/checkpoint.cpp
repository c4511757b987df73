#include "strdan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json_io.hpp"

namespace strdan {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'D', 'A', 'N', 'C', 'K'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8, what));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct TableEntry {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  std::vector<TableEntry> table;
  for (const auto& [name, t] : ck.params.named()) table.push_back({name, t});
  for (const auto& [name, mo] : ck.optimizer.moments) {
    table.push_back({"opt.m." + name, &mo.m});
    table.push_back({"opt.v." + name, &mo.v});
    table.push_back({"opt.vmax." + name, &mo.vmax});
  }

  json tensors = json::array();
  for (const TableEntry& e : table) {
    tensors.push_back({{"name", e.name}, {"rows", e.tensor->rows()}, {"cols", e.tensor->cols()}});
  }
  json header{{"config", model_config_to_json(ck.config)},
              {"epoch", ck.epoch},
              {"seed", ck.seed},
              {"optimizer",
               {{"step", ck.optimizer.step}, {"hyper", amsgrad_hyper_to_json(ck.optimizer.hyper)}}},
              {"metadata", ck.metadata},
              {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const TableEntry& e : table) {
    for (double v : e.tensor->values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(sizeof kMagic, "magic"), kMagic, sizeof kMagic) != 0) {
    throw FormatError("checkpoint: bad magic, not a strdan checkpoint");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t header_len = in.u64("header length");
  const char* header_ptr = in.take(header_len, "header");

  Checkpoint ck;
  try {
    const json header = json::parse(header_ptr, header_ptr + header_len);
    ck.config = model_config_from_json(header.at("config"));
    ck.epoch = header.at("epoch").get<int>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.optimizer.step = header.at("optimizer").at("step").get<std::int64_t>();
    ck.optimizer.hyper = amsgrad_hyper_from_json(header.at("optimizer").at("hyper"));
    ck.metadata = header.at("metadata").get<std::string>();

    ck.config.validate();
    ck.params = init_params(ck.config, 0);
    std::map<std::string, Tensor*> slots;
    for (auto& [name, t] : ck.params.named()) slots[name] = t;
    std::set<std::string> seen;

    for (const json& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      Tensor t(rows, cols);
      for (double& v : t.values()) v = std::bit_cast<double>(in.u64("tensor payload"));

      auto it = slots.find(name);
      if (it != slots.end()) {
        if (!it->second->same_shape(t)) {
          throw FormatError("checkpoint: tensor '" + name + "' has shape " + t.shape_string() +
                            ", config implies " + it->second->shape_string());
        }
        *it->second = std::move(t);
        seen.insert(name);
        continue;
      }
      bool matched = false;
      for (const char* slot : {"opt.m.", "opt.v.", "opt.vmax."}) {
        const std::string prefix(slot);
        if (name.rfind(prefix, 0) != 0) continue;
        Moments& mo = ck.optimizer.moments[name.substr(prefix.size())];
        (prefix == "opt.m." ? mo.m : prefix == "opt.v." ? mo.v : mo.vmax) = std::move(t);
        matched = true;
        break;
      }
      if (!matched) throw FormatError("checkpoint: unknown tensor '" + name + "'");
    }
    if (seen.size() != slots.size()) {
      throw FormatError("checkpoint: missing model parameters");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes after payload");
  return ck;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace strdan

#include "epifusion/checkpoint.hpp"

#include <fstream>
#include <map>

namespace epifusion {

void write_tfz(const std::string& path, const std::vector<NamedTensor>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "TFZ v1\n";
  write_u32(os, static_cast<uint32_t>(records.size()));
  for (const NamedTensor& rec : records) {
    write_u32(os, static_cast<uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    write_u32(os, static_cast<uint32_t>(rec.value.shape.size()));
    for (int d : rec.value.shape) write_u32(os, static_cast<uint32_t>(d));
    for (double v : rec.value.data) write_f32(os, static_cast<float>(v));
  }
}

std::vector<NamedTensor> read_tfz(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "TFZ v1") throw FormatError("checkpoint: bad magic");
  const uint32_t count = read_u32(is);
  if (count > 100000) throw FormatError("checkpoint: implausible record count");
  std::vector<NamedTensor> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor rec;
    const uint32_t name_len = read_u32(is);
    if (name_len > 4096) throw FormatError("checkpoint: implausible name length");
    rec.name.resize(name_len);
    is.read(rec.name.data(), name_len);
    if (!is) throw FormatError("checkpoint: truncated name");
    const uint32_t rank = read_u32(is);
    if (rank > 8) throw FormatError("checkpoint: implausible rank");
    std::vector<int> shape;
    for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(read_u32(is)));
    rec.value = Tensor(shape);
    for (double& v : rec.value.data) v = read_f32(is);
    if (!is) throw FormatError("checkpoint: truncated tensor payload");
    records.push_back(std::move(rec));
  }
  return records;
}

void write_checkpoint(const std::string& path, const Parameters& params) {
  std::vector<NamedTensor> records;
  const ModelConfig& c = params.cfg;
  records.push_back({"config/model",
                     Tensor({12}, {static_cast<double>(c.d), static_cast<double>(c.heads),
                                   static_cast<double>(c.layers), static_cast<double>(c.d_ff),
                                   static_cast<double>(c.d_head), static_cast<double>(c.grid_h),
                                   static_cast<double>(c.grid_w), static_cast<double>(c.image_size),
                                   static_cast<double>(c.channels), static_cast<double>(c.k),
                                   c.gamma, static_cast<double>(static_cast<int>(c.pe_mode)) * 2 +
                                                (c.mask_cross_view ? 1 : 0)})});
  for (const auto& [name, tensor] : params.registry()) records.push_back({name, *tensor});
  write_tfz(path, records);
}

Parameters read_checkpoint(const std::string& path) {
  const std::vector<NamedTensor> records = read_tfz(path);
  std::map<std::string, const NamedTensor*> by_name;
  for (const NamedTensor& rec : records) by_name[rec.name] = &rec;

  const auto cfg_it = by_name.find("config/model");
  if (cfg_it == by_name.end()) throw FormatError("checkpoint: missing config record");
  const std::vector<double>& cv = cfg_it->second->value.data;
  if (cv.size() != 12) throw FormatError("checkpoint: bad config record");

  Parameters params;
  ModelConfig& c = params.cfg;
  c.d = static_cast<int>(cv[0]);
  c.heads = static_cast<int>(cv[1]);
  c.layers = static_cast<int>(cv[2]);
  c.d_ff = static_cast<int>(cv[3]);
  c.d_head = static_cast<int>(cv[4]);
  c.grid_h = static_cast<int>(cv[5]);
  c.grid_w = static_cast<int>(cv[6]);
  c.image_size = static_cast<int>(cv[7]);
  c.channels = static_cast<int>(cv[8]);
  c.k = static_cast<int>(cv[9]);
  c.gamma = cv[10];
  const int mode_bits = static_cast<int>(cv[11]);
  c.pe_mode = static_cast<PeMode>(mode_bits / 2);
  c.mask_cross_view = (mode_bits % 2) == 1;

  params.init(0);  // allocate shapes; every active tensor is overwritten below
  for (auto& [name, tensor] : params.registry()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
    if (it->second->value.shape != tensor->shape)
      throw FormatError("checkpoint: shape mismatch for " + name);
    *tensor = it->second->value;
  }
  return params;
}

}  // namespace epifusion

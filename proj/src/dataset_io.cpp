#include "epifusion/dataset_io.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace epifusion {

namespace {

void write_f64(std::string& buf, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

double read_f64(const std::string& buf, size_t& pos) {
  if (pos + 8 > buf.size()) throw FormatError("poses.bin: truncated payload");
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i)
    u |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
  pos += 8;
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

std::string view_file_name(int frame, int view) {
  char name[64];
  std::snprintf(name, sizeof(name), "frame_%06d_view_%d.img", frame, view);
  return name;
}

}  // namespace

void write_rig_json(const std::string& path, const Rig& rig) {
  nlohmann::json j;
  j["version"] = 1;
  j["image_size"] = rig.image_size;
  j["cameras"] = nlohmann::json::array();
  for (const CameraParams& cam : rig.cameras)
    j["cameras"].push_back(nlohmann::json::parse(camera_to_json(cam)));
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

Rig read_rig_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open for reading: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rig.json parse error: ") + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw FormatError("rig.json: unsupported version");
  Rig rig;
  rig.image_size = j.value("image_size", 128);
  for (const auto& c : j.at("cameras")) rig.cameras.push_back(camera_from_json_text(c.dump()));
  if (rig.cameras.size() < 2) throw FormatError("rig.json: need at least two cameras");
  return rig;
}

void write_view_image(const std::string& path, const ViewImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "IMG v1 " << img.channels << " " << img.height << " " << img.width << "\n";
  write_f32_array(os, img.v.data(), img.v.size());
}

ViewImage read_view_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("image file: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  ViewImage img;
  hs >> magic >> version >> img.channels >> img.height >> img.width;
  if (!hs || magic != "IMG" || version != "v1" || img.channels <= 0 || img.height <= 0 ||
      img.width <= 0)
    throw FormatError("image file: bad header '" + line + "'");
  img.v.resize(static_cast<size_t>(img.channels) * img.height * img.width);
  read_f32_array(is, img.v.data(), img.v.size());
  if (!is) throw FormatError("image file: truncated payload");
  return img;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  fs::create_directories(fs::path(dir) / "views");
  write_rig_json((fs::path(dir) / "rig.json").string(), ds.rig);

  const int n_views = static_cast<int>(ds.rig.cameras.size());
  std::string payload;
  for (const ScenePose& pose : ds.frames) {
    write_f64(payload, static_cast<double>(pose.frame_id));
    for (int j = 0; j < ds.k; ++j)
      for (int c = 0; c < 3; ++c) write_f64(payload, pose.joints3d(j, c));
    for (int v = 0; v < n_views; ++v) {
      const ViewObservation& obs = pose.views[static_cast<size_t>(v)];
      for (int j = 0; j < ds.k; ++j) {
        write_f64(payload, obs.joints2d[static_cast<size_t>(j)].u);
        write_f64(payload, obs.joints2d[static_cast<size_t>(j)].v);
        write_f64(payload, obs.visible[static_cast<size_t>(j)] ? 1.0 : 0.0);
      }
    }
    write_f64(payload, ds.sigma_hm);
  }
  const uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());

  std::ofstream os(fs::path(dir) / "poses.bin", std::ios::binary);
  if (!os) throw DataError("cannot open poses.bin for writing in " + dir);
  os << "POSES v1 " << ds.frames.size() << " " << ds.k << " " << n_views << " " << crc << "\n";
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));

  for (size_t f = 0; f < ds.frames.size(); ++f)
    for (int v = 0; v < n_views; ++v)
      write_view_image((fs::path(dir) / "views" / view_file_name(ds.frames[f].frame_id, v)).string(),
                       ds.images[f][static_cast<size_t>(v)]);
}

Dataset read_dataset(const std::string& dir) {
  Dataset ds;
  ds.rig = read_rig_json((fs::path(dir) / "rig.json").string());
  const int n_views = static_cast<int>(ds.rig.cameras.size());

  std::ifstream is(fs::path(dir) / "poses.bin", std::ios::binary);
  if (!is) throw DataError("cannot open poses.bin for reading in " + dir);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("poses.bin: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  size_t n_frames = 0;
  int k = 0, views_in_file = 0;
  uint32_t crc_expected = 0;
  hs >> magic >> version >> n_frames >> k >> views_in_file >> crc_expected;
  if (!hs || magic != "POSES" || version != "v1") throw FormatError("poses.bin: bad header '" + line + "'");
  if (views_in_file != n_views) throw FormatError("poses.bin: view count does not match rig.json");
  ds.k = k;

  std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const size_t frame_bytes = 8ull * (1 + static_cast<size_t>(k) * 3 +
                                     static_cast<size_t>(n_views) * static_cast<size_t>(k) * 3 + 1);
  if (payload.size() != n_frames * frame_bytes) throw FormatError("poses.bin: truncated payload");
  const uint32_t crc_actual =
      crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  if (crc_actual != crc_expected) throw FormatError("poses.bin: checksum mismatch");

  size_t pos = 0;
  for (size_t f = 0; f < n_frames; ++f) {
    ScenePose pose;
    pose.frame_id = static_cast<int>(read_f64(payload, pos));
    pose.joints3d.resize(k, 3);
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < 3; ++c) pose.joints3d(j, c) = read_f64(payload, pos);
    for (int v = 0; v < n_views; ++v) {
      ViewObservation obs;
      for (int j = 0; j < k; ++j) {
        Pixel px;
        px.u = read_f64(payload, pos);
        px.v = read_f64(payload, pos);
        obs.joints2d.push_back(px);
        obs.visible.push_back(read_f64(payload, pos) > 0.5 ? 1 : 0);
      }
      pose.views.push_back(std::move(obs));
    }
    ds.sigma_hm = read_f64(payload, pos);
    ds.frames.push_back(std::move(pose));
  }

  ds.images.resize(ds.frames.size());
  for (size_t f = 0; f < ds.frames.size(); ++f) {
    for (int v = 0; v < n_views; ++v) {
      const std::string path =
          (fs::path(dir) / "views" / view_file_name(ds.frames[f].frame_id, v)).string();
      ds.images[f].push_back(read_view_image(path));
    }
  }
  return ds;
}

}  // namespace epifusion

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vesseltree/util.hpp"
#include "vesseltree/vec3.hpp"
#include "vesseltree/volume.hpp"

namespace vtree {

/// Volume on disk: `<base>.vhdr` text header (key: value lines) plus a raw
/// little-endian float32 payload referenced by the header's `data:` line.
inline void write_volume(const VoxelVolume& vol, const std::string& base_path) {
  vol.validate();
  std::filesystem::path base(base_path);
  std::string raw_name = base.filename().string() + ".vraw";
  {
    std::ofstream h(base_path + ".vhdr");
    if (!h) throw std::runtime_error("cannot open " + base_path + ".vhdr for writing");
    h << "dims: " << vol.nx << " " << vol.ny << " " << vol.nz << "\n";
    h << "spacing: " << fmt_double(vol.spacing) << "\n";
    h << "dtype: float32\n";
    h << "byteorder: little\n";
    h << "data: " << raw_name << "\n";
  }
  std::ofstream r(base_path + ".vraw", std::ios::binary);
  if (!r) throw std::runtime_error("cannot open " + base_path + ".vraw for writing");
  r.write(reinterpret_cast<const char*>(vol.data.data()),
          (std::streamsize)(vol.data.size() * sizeof(float)));
}

inline VoxelVolume read_volume(const std::string& header_path) {
  std::ifstream h(header_path);
  if (!h) throw std::runtime_error("cannot open volume header " + header_path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(h, line)) {
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("malformed volume header: line without ':' in " + header_path);
    std::string key = line.substr(0, colon);
    std::string val = line.substr(colon + 1);
    while (!val.empty() && val.front() == ' ') val.erase(val.begin());
    kv[key] = val;
  }
  for (const char* req : {"dims", "spacing", "dtype", "byteorder", "data"}) {
    if (!kv.count(req))
      throw std::runtime_error(std::string("malformed volume header: missing key '") + req + "'");
  }
  if (kv["dtype"] != "float32")
    throw std::runtime_error("malformed volume header: unsupported dtype " + kv["dtype"]);
  if (kv["byteorder"] != "little")
    throw std::runtime_error("malformed volume header: unsupported byteorder " + kv["byteorder"]);

  VoxelVolume vol;
  {
    std::istringstream ss(kv["dims"]);
    if (!(ss >> vol.nx >> vol.ny >> vol.nz))
      throw std::runtime_error("malformed volume header: bad dims line");
  }
  {
    std::istringstream ss(kv["spacing"]);
    if (!(ss >> vol.spacing)) throw std::runtime_error("malformed volume header: bad spacing line");
  }
  if (vol.nx < 1 || vol.ny < 1 || vol.nz < 1 || !(vol.spacing > 0))
    throw std::runtime_error("malformed volume header: invalid dims or spacing");

  std::filesystem::path raw_path = std::filesystem::path(header_path).parent_path() / kv["data"];
  std::ifstream r(raw_path, std::ios::binary);
  if (!r) throw std::runtime_error("cannot open volume payload " + raw_path.string());
  r.seekg(0, std::ios::end);
  std::size_t bytes = (std::size_t)r.tellg();
  r.seekg(0);
  std::size_t expected = vol.size() * sizeof(float);
  if (bytes < expected)
    throw std::runtime_error("truncated volume payload: " + std::to_string(bytes) + " bytes, " +
                             "expected " + std::to_string(expected));
  if (bytes > expected)
    throw std::runtime_error("volume dimension mismatch: payload has " + std::to_string(bytes) +
                             " bytes but header dims need " + std::to_string(expected));
  vol.data.resize(vol.size());
  r.read(reinterpret_cast<char*>(vol.data.data()), (std::streamsize)expected);
  if (!r) throw std::runtime_error("truncated volume payload: short read");
  vol.validate();
  return vol;
}

/// Tree on disk: one node per line, `id parent x y z radius`, root parent -1,
/// coordinates in mm. Node ids must be 0..n-1 in order.
inline void write_tree(const CenterlineTree& tree, const std::string& path) {
  tree.validate();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    f << i << " " << n.parent << " " << fmt_double(n.pos.x) << " " << fmt_double(n.pos.y)
      << " " << fmt_double(n.pos.z) << " " << fmt_double(n.radius) << "\n";
  }
}

inline CenterlineTree read_tree(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open tree file " + path);
  CenterlineTree tree;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long id = 0, parent = 0;
    CenterlineTree::Node n;
    if (!(ss >> id >> parent >> n.pos.x >> n.pos.y >> n.pos.z >> n.radius))
      throw std::runtime_error("malformed tree file " + path + " at line " +
                               std::to_string(lineno));
    if (id != (long)tree.nodes.size())
      throw std::runtime_error("tree file " + path + ": ids must be consecutive from 0, got " +
                               std::to_string(id) + " at line " + std::to_string(lineno));
    n.parent = (int)parent;
    tree.nodes.push_back(n);
  }
  if (tree.nodes.empty()) throw std::runtime_error("tree file " + path + " is empty");
  int root = -1;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (tree.nodes[i].parent == -1) {
      if (root != -1) throw std::runtime_error("tree file " + path + " has two roots");
      root = (int)i;
    }
  }
  if (root == -1) throw std::runtime_error("tree file " + path + " has no root");
  tree.root = root;
  tree.validate();
  return tree;
}

}  // namespace vtree

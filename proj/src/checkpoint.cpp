#include "apv/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "apv/errors.hpp"

namespace apv {

Checkpoint Checkpoint::from_params(const ParamStore& params,
                                   const std::vector<std::string>& groups,
                                   std::vector<std::pair<std::string, std::string>> config_snapshot,
                                   std::uint64_t projection_seed) {
  Checkpoint ck;
  ck.config = std::move(config_snapshot);
  ck.projection_seed = projection_seed;
  for (const Param* p : params.all()) {
    bool keep = groups.empty();
    for (const auto& g : groups) keep = keep || p->group() == g;
    if (!keep) continue;
    Entry e;
    e.name = p->name;
    e.group = p->group();
    e.shape = p->value.shape();
    e.offset = ck.payload.size();
    ck.entries.push_back(e);
    for (long i = 0; i < p->value.size(); ++i)
      ck.payload.push_back(static_cast<float>(p->value.at(i)));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ostringstream head;
  head << "APVC 1\n";
  head << "projection_seed " << projection_seed << "\n";
  head << "config_begin\n";
  for (const auto& [k, v] : config) head << k << " = " << v << "\n";
  head << "config_end\n";
  head << "manifest_begin\n";
  for (const auto& e : entries) {
    head << e.name << " " << e.group << " f32";
    for (long d : e.shape) head << " " << d;
    head << "\n";
  }
  head << "manifest_end\n";
  head << "payload " << payload.size() << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint " + path.string() + " for writing");
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());

  Checkpoint ck;
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw FormatError("truncated checkpoint header");
    return line;
  };
  if (next_line() != "APVC 1") throw FormatError("bad checkpoint magic");
  {
    std::istringstream ss(next_line());
    std::string key;
    ss >> key >> ck.projection_seed;
    if (key != "projection_seed") throw FormatError("expected projection_seed");
  }
  if (next_line() != "config_begin") throw FormatError("expected config_begin");
  while (next_line() != "config_end") {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("malformed config line: " + line);
    ck.config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  if (next_line() != "manifest_begin") throw FormatError("expected manifest_begin");
  std::size_t offset = 0;
  while (next_line() != "manifest_end") {
    std::istringstream ss(line);
    Entry e;
    std::string dtype;
    ss >> e.name >> e.group >> dtype;
    if (dtype != "f32") throw FormatError("unsupported dtype " + dtype);
    long d;
    while (ss >> d) e.shape.push_back(d);
    e.offset = offset;
    offset += static_cast<std::size_t>(e.count());
    ck.entries.push_back(std::move(e));
  }
  std::size_t payload_count = 0;
  {
    std::istringstream ss(next_line());
    std::string key;
    ss >> key >> payload_count;
    if (key != "payload") throw FormatError("expected payload size");
  }
  if (payload_count != offset) throw FormatError("manifest does not match payload size");
  ck.payload.resize(payload_count);
  in.read(reinterpret_cast<char*>(ck.payload.data()),
          static_cast<std::streamsize>(payload_count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(payload_count * sizeof(float)))
    throw FormatError("truncated checkpoint payload");
  return ck;
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

bool Checkpoint::has_group(const std::string& group) const {
  for (const auto& e : entries)
    if (e.group == group) return true;
  return false;
}

std::string Checkpoint::config_value(const std::string& key) const {
  for (const auto& [k, v] : config)
    if (k == key) return v;
  return "";
}

void Checkpoint::copy_into(const Entry& e, Tensor& dst) const {
  if (e.shape != dst.shape())
    throw TransferError("shape mismatch for " + e.name);
  for (long i = 0; i < dst.size(); ++i)
    dst.at(i) = static_cast<real>(payload[e.offset + static_cast<std::size_t>(i)]);
}

}  // namespace apv

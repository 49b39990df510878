#include "apv/episode.hpp"

#include <cstring>
#include <fstream>

#include "apv/errors.hpp"

namespace apv {

namespace {

constexpr std::uint32_t kMagic = 0x45565041u;  // "APVE" little-endian
constexpr std::uint32_t kVersion = 1u;

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  buf.append(b, 4);
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + off);
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void Episode::validate() const {
  if (T < 1) throw ValidationError("episode must have T >= 1");
  if (static_cast<long>(frames.size()) != T * H * W * 3)
    throw ValidationError("episode frame array size disagrees with T,H,W");
  if (has_actions && static_cast<long>(actions.size()) != T * A)
    throw ValidationError("episode action array size disagrees with T,A");
  if (has_rewards && static_cast<long>(rewards.size()) != T)
    throw ValidationError("episode reward array size disagrees with T");
  if (static_cast<long>(dones.size()) != T)
    throw ValidationError("episode done array size disagrees with T");
  for (long t = 0; t < T; ++t)
    if (dones[t] != 0 && t != T - 1)
      throw ValidationError("done flag set before the final step");
}

long write_episode(const Episode& ep, const std::filesystem::path& path) {
  ep.validate();
  std::string buf;
  const std::uint32_t flags =
      (ep.has_actions ? 1u : 0u) | (ep.has_rewards ? 2u : 0u);
  put_u32(buf, kMagic);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(ep.T));
  put_u32(buf, static_cast<std::uint32_t>(ep.H));
  put_u32(buf, static_cast<std::uint32_t>(ep.W));
  put_u32(buf, 3u);
  put_u32(buf, static_cast<std::uint32_t>(ep.A));
  put_u32(buf, flags);
  buf.append(reinterpret_cast<const char*>(ep.frames.data()), ep.frames.size());
  // float payloads are already little-endian on every supported target
  if (ep.has_actions)
    buf.append(reinterpret_cast<const char*>(ep.actions.data()), ep.actions.size() * 4);
  if (ep.has_rewards)
    buf.append(reinterpret_cast<const char*>(ep.rewards.data()), ep.rewards.size() * 4);
  buf.append(reinterpret_cast<const char*>(ep.dones.data()), ep.dones.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path.string());
  return static_cast<long>(buf.size());
}

Episode read_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 32) throw FormatError("episode file shorter than header");
  if (get_u32(buf, 0) != kMagic) throw FormatError("bad magic in " + path.string());
  if (get_u32(buf, 4) != kVersion) throw FormatError("unsupported episode version");

  Episode ep;
  ep.T = get_u32(buf, 8);
  ep.H = get_u32(buf, 12);
  ep.W = get_u32(buf, 16);
  const std::uint32_t channels = get_u32(buf, 20);
  ep.A = get_u32(buf, 24);
  const std::uint32_t flags = get_u32(buf, 28);
  if (channels != 3) throw FormatError("unsupported channel count");
  ep.has_actions = flags & 1u;
  ep.has_rewards = flags & 2u;

  const std::size_t frame_bytes = static_cast<std::size_t>(ep.T) * ep.H * ep.W * 3;
  const std::size_t action_bytes = ep.has_actions ? static_cast<std::size_t>(ep.T) * ep.A * 4 : 0;
  const std::size_t reward_bytes = ep.has_rewards ? static_cast<std::size_t>(ep.T) * 4 : 0;
  const std::size_t done_bytes = static_cast<std::size_t>(ep.T);
  const std::size_t expected = 32 + frame_bytes + action_bytes + reward_bytes + done_bytes;
  if (buf.size() != expected)
    throw FormatError("episode payload truncated or oversized in " + path.string());

  std::size_t off = 32;
  ep.frames.resize(frame_bytes);
  std::memcpy(ep.frames.data(), buf.data() + off, frame_bytes);
  off += frame_bytes;
  if (ep.has_actions) {
    ep.actions.resize(static_cast<std::size_t>(ep.T) * ep.A);
    std::memcpy(ep.actions.data(), buf.data() + off, action_bytes);
    off += action_bytes;
  }
  if (ep.has_rewards) {
    ep.rewards.resize(static_cast<std::size_t>(ep.T));
    std::memcpy(ep.rewards.data(), buf.data() + off, reward_bytes);
    off += reward_bytes;
  }
  ep.dones.resize(done_bytes);
  std::memcpy(ep.dones.data(), buf.data() + off, done_bytes);
  ep.validate();
  return ep;
}

}  // namespace apv

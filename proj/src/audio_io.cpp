#include "dcem/audio_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dcem/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "WAV and NPY I/O assume a little-endian host");

namespace dcem {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

template <class T>
T read_le(const std::vector<char>& buf, std::size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) {
    return DataError("bad WAV file " + path.string() + ": " + why);
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw fail("missing RIFF/WAVE header");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const uint32_t size = read_le<uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw fail("truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw fail("short fmt chunk");
      format = read_le<uint16_t>(buf, body);
      channels = read_le<uint16_t>(buf, body + 2);
      rate = read_le<uint32_t>(buf, body + 4);
      bits = read_le<uint16_t>(buf, body + 14);
      if (format == kFormatExtensible && size >= 26)
        format = read_le<uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels != 1) throw fail("only mono audio is supported");
      if (rate != static_cast<uint32_t>(kSampleRate))
        throw fail("sample rate " + std::to_string(rate) + " != 16000");
      Waveform w;
      if (format == kFormatPcm && bits == 16) {
        const std::size_t n = size / 2;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i)
          w.samples[i] = read_le<int16_t>(buf, body + 2 * i) / 32768.0;
      } else if (format == kFormatFloat && bits == 32) {
        const std::size_t n = size / 4;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i)
          w.samples[i] = read_le<float>(buf, body + 4 * i);
      } else {
        throw fail("unsupported sample format (need 16-bit PCM or 32-bit float)");
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw fail("no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate != kSampleRate)
    throw DataError("write_wav: sample rate must be 16000");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write WAV file: " + path.string());
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 4);
  out.write("RIFF", 4);
  put<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put<uint32_t>(out, 16);
  put<uint16_t>(out, kFormatFloat);
  put<uint16_t>(out, 1);
  put<uint32_t>(out, kSampleRate);
  put<uint32_t>(out, kSampleRate * 4);
  put<uint16_t>(out, 4);
  put<uint16_t>(out, 32);
  out.write("data", 4);
  put<uint32_t>(out, data_bytes);
  for (double v : w.samples) put<float>(out, static_cast<float>(v));
  if (!out) throw DataError("short write: " + path.string());
}

void write_npy(const std::filesystem::path& path, const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  std::ostringstream shape;
  shape << "(";
  for (int64_t d = 0; d < c.dim(); ++d) shape << c.size(d) << (c.dim() == 1 || d + 1 < c.dim() ? "," : "");
  shape << ")";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " +
                       shape.str() + ", }";
  // Magic (6) + version (2) + header length (2) + header, padded to 64 bytes.
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("\x93NUMPY", 6);
  out.put(1);
  out.put(0);
  put<uint16_t>(out, static_cast<uint16_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(c.data_ptr<double>()),
            static_cast<std::streamsize>(c.numel() * sizeof(double)));
}

}  // namespace dcem

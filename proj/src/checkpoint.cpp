#include "impress/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace impress {

namespace {

constexpr const char* kMagic = "IMPRESS-CHECKPOINT";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') return false;
  }
  return true;
}

}  // namespace

std::optional<std::string> Checkpoint::find(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& Checkpoint::require(const std::string& key) const {
  for (const auto& kv : config) {
    if (kv.first == key) return kv.second;
  }
  fail(ErrorKind::FormatError, "checkpoint lacks config key '" + key + "'");
}

void Checkpoint::set(const std::string& key, std::string value) {
  for (auto& kv : config) {
    if (kv.first == key) {
      kv.second = std::move(value);
      return;
    }
  }
  config.emplace_back(key, std::move(value));
}

const CheckpointTensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail(ErrorKind::FormatError, "checkpoint lacks tensor '" + name + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    fail(ErrorKind::FormatError, what + ": not a number: '" + text + "'");
  }
  return v;
}

long long parse_int(const std::string& text, const std::string& what) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    fail(ErrorKind::FormatError, what + ": not an integer: '" + text + "'");
  }
  return v;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  if (!valid_token(ck.kind)) fail(ErrorKind::FormatError, "checkpoint kind must be one word");
  out << kMagic << "\nversion " << kCheckpointVersion << "\nkind " << ck.kind << "\n";
  for (const auto& [k, v] : ck.config) {
    if (!valid_token(k) || v.find('\n') != std::string::npos) fail(ErrorKind::FormatError, "bad config entry '" + k + "'");
    out << "config " << k << " " << v << "\n";
  }
  std::size_t offset = 0;
  for (const auto& t : ck.tensors) {
    if (!valid_token(t.name)) fail(ErrorKind::FormatError, "tensor names must be one word");
    out << "tensor " << t.name << " " << t.shape.size();
    for (auto d : t.shape) out << " " << d;
    out << " " << offset << "\n";
    offset += static_cast<std::size_t>(t.values.size()) * 4;
  }
  out << "payload " << offset << "\nend\n";
  for (const auto& t : ck.tensors) {
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(t.values.data()[i]));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      out.write(bytes, 4);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) fail(ErrorKind::FormatError, "not a checkpoint (bad magic line)");
  if (!std::getline(in, line)) fail(ErrorKind::FormatError, "missing version line");
  auto words = split_words(line);
  if (words.size() != 2 || words[0] != "version") fail(ErrorKind::FormatError, "malformed version line");
  const auto version = parse_int(words[1], "version");
  if (version != kCheckpointVersion) {
    fail(ErrorKind::VersionError, "checkpoint version " + words[1] + " is not supported (expected " +
                                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  struct Entry {
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::optional<std::size_t> payload;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto space = line.find(' ');
    const std::string head = line.substr(0, space);
    if (head == "kind") {
      words = split_words(line);
      if (words.size() != 2) fail(ErrorKind::FormatError, "malformed kind line");
      ck.kind = words[1];
    } else if (head == "config") {
      const auto rest = space == std::string::npos ? std::string() : line.substr(space + 1);
      const auto sep = rest.find(' ');
      if (rest.empty() || sep == 0) fail(ErrorKind::FormatError, "malformed config line");
      ck.config.emplace_back(rest.substr(0, sep), sep == std::string::npos ? std::string() : rest.substr(sep + 1));
    } else if (head == "tensor") {
      words = split_words(line);
      if (words.size() < 4) fail(ErrorKind::FormatError, "malformed tensor line");
      const auto rank = parse_int(words[2], "tensor rank");
      if (rank < 0 || rank > 2 || words.size() != static_cast<std::size_t>(rank) + 4) {
        fail(ErrorKind::FormatError, "malformed tensor line for " + words[1]);
      }
      CheckpointTensor t;
      t.name = words[1];
      for (long long d = 0; d < rank; ++d) {
        const auto dim = parse_int(words[static_cast<std::size_t>(3 + d)], "tensor dim");
        if (dim < 1) fail(ErrorKind::FormatError, "tensor " + t.name + " has a non-positive dimension");
        t.shape.push_back(static_cast<std::size_t>(dim));
      }
      const auto off = parse_int(words.back(), "tensor offset");
      if (off < 0) fail(ErrorKind::FormatError, "negative tensor offset");
      entries.push_back({static_cast<std::size_t>(off)});
      ck.tensors.push_back(std::move(t));
    } else if (head == "payload") {
      words = split_words(line);
      if (words.size() != 2) fail(ErrorKind::FormatError, "malformed payload line");
      const auto bytes = parse_int(words[1], "payload size");
      if (bytes < 0) fail(ErrorKind::FormatError, "negative payload size");
      payload = static_cast<std::size_t>(bytes);
    } else {
      fail(ErrorKind::FormatError, "unexpected manifest line '" + line + "'");
    }
  }
  if (!ended) fail(ErrorKind::FormatError, "manifest is not terminated");
  if (ck.kind.empty()) fail(ErrorKind::FormatError, "manifest has no kind");
  if (!payload) fail(ErrorKind::FormatError, "manifest has no payload size");

  std::size_t expected = 0;
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    if (entries[i].offset != expected) fail(ErrorKind::FormatError, "tensor " + ck.tensors[i].name + " has a bad offset");
    const auto [rows, cols] = detail::storage_dims(ck.tensors[i].shape);
    expected += static_cast<std::size_t>(rows * cols) * 4;
  }
  if (expected != *payload) fail(ErrorKind::FormatError, "payload size disagrees with the tensor manifest");

  for (auto& t : ck.tensors) {
    const auto [rows, cols] = detail::storage_dims(t.shape);
    t.values.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
      char bytes[4];
      if (!in.read(bytes, 4)) fail(ErrorKind::FormatError, "payload is truncated in tensor " + t.name);
      std::uint32_t bits = 0;
      std::memcpy(&bits, bytes, 4);
      t.values.data()[i] = std::bit_cast<float>(to_little_endian(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::FormatError, "trailing bytes after the payload");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ostringstream buffer(std::ios::binary);
  write_checkpoint(buffer, checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  const std::string bytes = buffer.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
  return read_checkpoint(in);
}

}  // namespace impress

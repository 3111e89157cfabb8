#include "mistseg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "mistseg/errors.hpp"
#include "mistseg/image_io.hpp"

namespace mistseg {

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <class T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedParams& params) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    throw IoError("not a checkpoint (bad magic)");
  }
  std::vector<std::uint8_t> body(bytes.begin() + sizeof kCheckpointMagic, bytes.end());
  Reader r(body);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::vector<CheckpointRecord> records;
  while (!r.done()) {
    CheckpointRecord rec;
    rec.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < rank; ++i) rec.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const auto n = shape_numel(rec.shape);
    if (n > body.size() / 8) throw IoError("checkpoint record " + rec.name + " claims more data than the file holds");
    rec.values.resize(n);
    for (auto& v : rec.values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    records.push_back(std::move(rec));
  }
  return records;
}

void save_checkpoint(const std::filesystem::path& path, const NamedParams& params) {
  io::write_file_atomic(path, encode_checkpoint(params));
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint(const std::filesystem::path& path, const NamedParams& params) {
  auto records = read_checkpoint(path);
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& rec : records) by_name[rec.name] = &rec;
  if (by_name.size() != params.size()) {
    throw IoError(path.string() + ": holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                  std::to_string(params.size()));
  }
  for (const auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError(path.string() + ": missing tensor " + name);
    if (it->second->shape != t.shape()) {
      throw IoError(path.string() + ": tensor " + name + " has shape " + shape_str(it->second->shape) + ", expected " +
                    shape_str(t.shape()));
    }
    Tensor target = t;
    std::copy(it->second->values.begin(), it->second->values.end(), target.mutable_data().begin());
  }
}

}  // namespace mistseg

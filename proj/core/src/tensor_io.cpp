#include "bdb/tensor_io.hpp"

#include "binary_io.hpp"
#include "bdb/error.hpp"

#include <sstream>

namespace bdb {

namespace {
constexpr char kMagic[8] = {'B', 'D', 'B', 'T', 'N', 'S', 'R', '1'};
}

void save_tensor(const torch::Tensor& t, const std::filesystem::path& path) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  detail::Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<int64_t>(c.dim());
  for (auto s : c.sizes()) w.put<int64_t>(s);
  w.put_bytes(c.data_ptr<float>(), sizeof(float) * static_cast<size_t>(c.numel()));
  detail::write_file_atomic(path, w.bytes());
}

torch::Tensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes, path.string());
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
    throw LoadError("not a tensor file: " + path.string());
  const auto rank = r.get<int64_t>();
  if (rank < 0 || rank > 8) throw LoadError("corrupt tensor rank in " + path.string());
  std::vector<int64_t> shape;
  for (int64_t i = 0; i < rank; ++i) shape.push_back(r.get<int64_t>());
  auto t = torch::empty(shape, torch::kFloat32);
  r.get_bytes(t.data_ptr<float>(), sizeof(float) * static_cast<size_t>(t.numel()));
  if (r.remaining() != 0) throw LoadError("trailing bytes in tensor file " + path.string());
  return t;
}

torch::Tensor load_ppm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw LoadError("unsupported PPM (need P6, 8-bit): " + path.string());
  const auto offset = static_cast<size_t>(in.tellg());
  if (bytes.size() < offset + static_cast<size_t>(w) * h * 3) throw LoadError("truncated PPM: " + path.string());
  auto raw = torch::empty({h, w, 3}, torch::kUInt8);
  std::memcpy(raw.data_ptr<uint8_t>(), bytes.data() + offset, static_cast<size_t>(w) * h * 3);
  return raw.to(torch::kFloat32).div_(255.0f);
}

void save_ppm(const torch::Tensor& image_hwc, const std::filesystem::path& path) {
  auto img = image_hwc.detach().to(torch::kFloat32);
  if (img.dim() == 2) img = img.unsqueeze(2);
  if (img.size(2) == 1) img = img.expand({img.size(0), img.size(1), 3});
  auto raw = img.clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  std::string out = "P6\n" + std::to_string(raw.size(1)) + " " + std::to_string(raw.size(0)) + "\n255\n";
  out.append(reinterpret_cast<const char*>(raw.data_ptr<uint8_t>()), static_cast<size_t>(raw.numel()));
  detail::write_file_atomic(path, out);
}

}  // namespace bdb

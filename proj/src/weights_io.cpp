#include "softattr/weights_io.hpp"

#include "softattr/image_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>

namespace softattr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "weight IO assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  void read(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<NamedTensor> model_parameters(const Model& model) {
  std::vector<NamedTensor> out;
  for (const Layer& layer : model.layers()) {
    if (const auto* d = std::get_if<DenseLayer>(&layer.op)) {
      out.push_back({layer.name + ".weight", d->weight});
      out.push_back({layer.name + ".bias", d->bias});
    } else if (const auto* c = std::get_if<Conv3x3Layer>(&layer.op)) {
      out.push_back({layer.name + ".kernel", c->kernel});
      out.push_back({layer.name + ".bias", c->bias});
    }
  }
  return out;
}

std::string encode_weights(const std::vector<NamedTensor>& records) {
  std::string out(kWeightMagic, 4);
  for (const NamedTensor& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put_u32(out, static_cast<std::uint32_t>(r.value.rank()));
    for (Eigen::Index d : r.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(r.value.data().data()),
               static_cast<std::size_t>(r.value.size()) * sizeof(double));
  }
  return out;
}

std::vector<NamedTensor> decode_weights(const std::string& bytes) {
  Reader in(bytes);
  char magic[4];
  in.read(magic, 4, "magic");
  if (std::memcmp(magic, kWeightMagic, 3) != 0) throw FormatError("bad magic", 0);
  if (magic[3] != kWeightMagic[3]) throw FormatError("unsupported version", 3);

  std::vector<NamedTensor> out;
  while (!in.done()) {
    NamedTensor r;
    const std::uint32_t len = in.u32("record name length");
    if (len > bytes.size()) throw FormatError("truncated record name", in.offset());
    r.name.resize(len);
    in.read(r.name.data(), len, "record name");
    const std::uint32_t rank = in.u32("record rank");
    if (rank == 0 || rank > 8) throw FormatError("invalid rank " + std::to_string(rank), in.offset() - 4);
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = in.u32("record dims");
      if (d == 0) throw FormatError("zero extent", in.offset() - 4);
      shape.push_back(d);
      count *= d;
    }
    if (count > bytes.size() / sizeof(double) + 1) {
      throw FormatError("truncated payload of '" + r.name + "'", in.offset());
    }
    Eigen::VectorXd data(static_cast<Eigen::Index>(count));
    in.read(data.data(), count * sizeof(double), "payload");
    r.value = TensorD(std::move(shape), std::move(data));
    out.push_back(std::move(r));
  }
  return out;
}

Model assign_parameters(Model skeleton, const std::vector<NamedTensor>& records) {
  std::map<std::string, const TensorD*> by_name;
  for (const NamedTensor& r : records) {
    if (!by_name.emplace(r.name, &r.value).second) throw Error("duplicate record '" + r.name + "'");
  }
  std::size_t used = 0;
  auto take = [&](const std::string& name, TensorD& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("missing weight record '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw Error("record '" + name + "' has shape " + shape_string(it->second->shape()) +
                  ", expected " + shape_string(dst.shape()));
    }
    dst = *it->second;
    ++used;
  };
  for (Layer& layer : skeleton.mutable_layers()) {
    if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      take(layer.name + ".weight", d->weight);
      take(layer.name + ".bias", d->bias);
    } else if (auto* c = std::get_if<Conv3x3Layer>(&layer.op)) {
      take(layer.name + ".kernel", c->kernel);
      take(layer.name + ".bias", c->bias);
    }
  }
  if (used != records.size()) throw Error("weight file has records the model does not use");
  return skeleton;
}

void save(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(model_parameters(model)));
}

Model load(const std::filesystem::path& path) {
  return assign_parameters(toy::make_cnn(0), decode_weights(read_file(path)));
}

}  // namespace softattr

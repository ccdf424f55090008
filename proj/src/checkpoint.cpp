#include "hformer/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace hformer {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'C', 'K'};

void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
    os.write((const char*)b, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write((const char*)b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write((const char*)b, 8);
}

uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read((char*)b, 2);
    return (uint16_t)(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read((char*)b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)b[i] << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read((char*)b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)b[i] << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw UserError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put_u32(os, ckpt.version);
    put_u32(os, (uint32_t)ckpt.config_text.size());
    os.write(ckpt.config_text.data(), (std::streamsize)ckpt.config_text.size());
    put_u32(os, (uint32_t)ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xffff) throw std::runtime_error("checkpoint: tensor name too long");
        put_u16(os, (uint16_t)name.size());
        os.write(name.data(), (std::streamsize)name.size());
        const uint8_t ndim = (uint8_t)t.shape.size();
        os.write((const char*)&ndim, 1);
        for (int d : t.shape) put_u32(os, (uint32_t)d);
        os.write((const char*)t.ptr(), (std::streamsize)(t.numel() * sizeof(float)));
    }
    put_u64(os, ckpt.iteration);
    put_u32(os, (uint32_t)ckpt.rng_state.size());
    os.write(ckpt.rng_state.data(), (std::streamsize)ckpt.rng_state.size());
    if (!os) throw UserError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UserError("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw UserError(path.string() + ": bad magic, not an HFCK checkpoint");
    Checkpoint ckpt;
    ckpt.version = get_u32(is);
    if (ckpt.version != kCheckpointVersion)
        throw UserError(path.string() + ": unsupported checkpoint version " + std::to_string(ckpt.version));
    const uint32_t cfg_len = get_u32(is);
    ckpt.config_text.resize(cfg_len);
    is.read(ckpt.config_text.data(), cfg_len);
    const uint32_t count = get_u32(is);
    if (!is) throw UserError(path.string() + ": truncated header");
    ckpt.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = get_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint8_t ndim = 0;
        is.read((char*)&ndim, 1);
        Shape shape(ndim);
        for (auto& d : shape) d = (int)get_u32(is);
        if (!is) throw UserError(path.string() + ": truncated tensor header");
        Tensor<float> t = Tensor<float>::zeros(shape);
        is.read((char*)t.ptr(), (std::streamsize)(t.numel() * sizeof(float)));
        if ((int64_t)is.gcount() != t.numel() * (int64_t)sizeof(float))
            throw UserError(path.string() + ": truncated tensor payload for " + name);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    ckpt.iteration = get_u64(is);
    const uint32_t rng_len = get_u32(is);
    if (!is) throw UserError(path.string() + ": truncated trailer");
    ckpt.rng_state.resize(rng_len);
    is.read(ckpt.rng_state.data(), rng_len);
    if ((uint32_t)is.gcount() != rng_len) throw UserError(path.string() + ": truncated rng state");
    is.peek();
    if (!is.eof()) throw UserError(path.string() + ": trailing bytes after checkpoint");
    return ckpt;
}

}  // namespace hformer

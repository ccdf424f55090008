#include "hformer/fpm.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace hformer {

namespace {

constexpr char kMagic[4] = {'F', 'P', 'M', '1'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    os.write((const char*)b, 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read((char*)b, 4);
    return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}

void write_header(std::ostream& os, FpmDtype dtype, int height, int width) {
    os.write(kMagic, 4);
    const uint8_t d = (uint8_t)dtype;
    os.write((const char*)&d, 1);
    put_u32(os, (uint32_t)height);
    put_u32(os, (uint32_t)width);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw UserError("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace

void write_fpm(const std::filesystem::path& path, int height, int width, const std::vector<float>& data) {
    if ((size_t)height * width != data.size()) throw std::runtime_error("write_fpm: payload size mismatch");
    auto os = open_out(path);
    write_header(os, FpmDtype::kF32, height, width);
    os.write((const char*)data.data(), (std::streamsize)(data.size() * sizeof(float)));
    if (!os) throw UserError("short write to " + path.string());
}

void write_fpm(const std::filesystem::path& path, int height, int width, const std::vector<uint8_t>& data) {
    if ((size_t)height * width != data.size()) throw std::runtime_error("write_fpm: payload size mismatch");
    auto os = open_out(path);
    write_header(os, FpmDtype::kU8, height, width);
    os.write((const char*)data.data(), (std::streamsize)data.size());
    if (!os) throw UserError("short write to " + path.string());
}

FpmArray read_fpm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UserError("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw UserError(path.string() + ": bad magic, not an FPM file");
    uint8_t d = 255;
    is.read((char*)&d, 1);
    FpmArray arr;
    if (d == 0)
        arr.dtype = FpmDtype::kF32;
    else if (d == 1)
        arr.dtype = FpmDtype::kU8;
    else
        throw UserError(path.string() + ": unknown dtype code " + std::to_string(d));
    arr.height = (int)get_u32(is);
    arr.width = (int)get_u32(is);
    if (!is || arr.height <= 0 || arr.width <= 0) throw UserError(path.string() + ": bad header dims");
    const size_t count = (size_t)arr.height * arr.width;
    const size_t elem = arr.dtype == FpmDtype::kF32 ? sizeof(float) : 1;
    if (arr.dtype == FpmDtype::kF32) {
        arr.f32.resize(count);
        is.read((char*)arr.f32.data(), (std::streamsize)(count * elem));
    } else {
        arr.u8.resize(count);
        is.read((char*)arr.u8.data(), (std::streamsize)(count * elem));
    }
    if ((size_t)is.gcount() != count * elem) throw UserError(path.string() + ": truncated payload");
    is.peek();
    if (!is.eof()) throw UserError(path.string() + ": trailing bytes after payload");
    return arr;
}

FpmArray read_fpm_expect(const std::filesystem::path& path, FpmDtype expect) {
    FpmArray arr = read_fpm(path);
    if (arr.dtype != expect)
        throw UserError(path.string() + ": dtype mismatch (expected " +
                        (expect == FpmDtype::kF32 ? "f32" : "u8") + ")");
    return arr;
}

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries) {
    auto os = open_out(dir / "manifest.txt");
    for (const auto& e : entries) os << e.id << " " << e.split << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) throw UserError("cannot open manifest in " + dir.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        if (!(ss >> e.id >> e.split)) throw UserError("malformed manifest line: " + line);
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_sample(const std::filesystem::path& dir, const std::string& id, const WrappedPhaseMap& phase,
                  const FringeOrderMap& order) {
    std::vector<float> f(phase.values.begin(), phase.values.end());
    write_fpm(dir / (id + "_phase.fpm"), phase.height, phase.width, f);
    write_fpm(dir / (id + "_order.fpm"), order.height, order.width, order.values);
}

Sample read_sample(const std::filesystem::path& dir, const std::string& id) {
    FpmArray ph = read_fpm_expect(dir / (id + "_phase.fpm"), FpmDtype::kF32);
    FpmArray ord = read_fpm_expect(dir / (id + "_order.fpm"), FpmDtype::kU8);
    if (ph.height != ord.height || ph.width != ord.width)
        throw UserError("sample " + id + ": phase/order dims disagree");
    Sample s;
    s.height = ph.height;
    s.width = ph.width;
    s.phase = std::move(ph.f32);
    s.order = std::move(ord.u8);
    return s;
}

std::vector<Sample> load_split(const std::filesystem::path& dir, const std::string& split) {
    std::vector<Sample> out;
    for (const auto& e : read_manifest(dir))
        if (e.split == split) out.push_back(read_sample(dir, e.id));
    return out;
}

}  // namespace hformer

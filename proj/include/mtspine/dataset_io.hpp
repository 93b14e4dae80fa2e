#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtspine/datagen.hpp"

namespace mtspine {

namespace io_detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float f) {
    std::uint32_t v;
    static_assert(sizeof(f) == sizeof(v));
    std::memcpy(&v, &f, 4);
    write_u32(os, v);
}

inline float read_f32(std::istream& is) {
    std::uint32_t v = read_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace io_detail

// Slice file: magic "MTSL", u32 version=1, u32 H, u32 W, then H*W
// little-endian f32 HU values, row-major.
inline void save_slice(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2) throw std::invalid_argument("save_slice: rank-2 image required");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write("MTSL", 4);
    io_detail::write_u32(os, 1);
    io_detail::write_u32(os, static_cast<std::uint32_t>(image.dim(0)));
    io_detail::write_u32(os, static_cast<std::uint32_t>(image.dim(1)));
    for (double v : image.data) io_detail::write_f32(os, static_cast<float>(v));
}

inline Tensor load_slice(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MTSL")
        throw std::runtime_error("bad slice magic in " + path.string());
    const std::uint32_t version = io_detail::read_u32(is);
    if (version != 1) throw std::runtime_error("unsupported slice version in " + path.string());
    const int h = static_cast<int>(io_detail::read_u32(is));
    const int w = static_cast<int>(io_detail::read_u32(is));
    Tensor img({h, w});
    for (double& v : img.data) v = io_detail::read_f32(is);
    return img;
}

// Dataset directory: manifest.csv with header
// file,patient_id,vertebra_id,bq_label,pi_label plus one MTSL file per slice.
inline void save_dataset(const std::filesystem::path& dir, const std::vector<SliceSample>& samples) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
    manifest << "file,patient_id,vertebra_id,bq_label,pi_label\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string name = "slice_" + std::to_string(i) + ".mtsl";
        save_slice(dir / name, samples[i].image);
        manifest << name << ',' << samples[i].patient_id << ',' << samples[i].vertebra_id << ','
                 << samples[i].bq_label << ',' << samples[i].pi_label << '\n';
    }
}

inline std::vector<SliceSample> load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) throw std::runtime_error("no manifest.csv in " + dir.string());
    std::string line;
    if (!std::getline(manifest, line)) throw std::runtime_error("empty manifest in " + dir.string());
    if (line != "file,patient_id,vertebra_id,bq_label,pi_label")
        throw std::runtime_error("unexpected manifest header: " + line);
    std::vector<SliceSample> out;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string file, pid, vid, bq, pi;
        if (!std::getline(ss, file, ',') || !std::getline(ss, pid, ',') ||
            !std::getline(ss, vid, ',') || !std::getline(ss, bq, ',') || !std::getline(ss, pi))
            throw std::runtime_error("malformed manifest line: " + line);
        SliceSample s;
        s.image = load_slice(dir / file);
        s.patient_id = pid;
        s.vertebra_id = vid;
        s.bq_label = std::stoi(bq);
        s.pi_label = std::stoi(pi);
        if (s.bq_label < 0 || s.bq_label > 3 || s.pi_label < 0 || s.pi_label > 2)
            throw std::runtime_error("label out of range in manifest line: " + line);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mtspine

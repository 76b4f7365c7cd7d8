#include "hybridseg/dicom.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "hybridseg/errors.hpp"

namespace hseg {

namespace {

constexpr const char* kExplicitLittleEndian = "1.2.840.10008.1.2.1";

std::string tag_str(std::uint16_t group, std::uint16_t element) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "(%04X,%04X)", group, element);
    return buf;
}

constexpr std::uint32_t tag_key(std::uint16_t group, std::uint16_t element) {
    return (static_cast<std::uint32_t>(group) << 16) | element;
}

constexpr std::uint32_t kModality = tag_key(0x0008, 0x0060);
constexpr std::uint32_t kPatientId = tag_key(0x0010, 0x0020);
constexpr std::uint32_t kInstanceNumber = tag_key(0x0020, 0x0013);
constexpr std::uint32_t kImagePosition = tag_key(0x0020, 0x0032);
constexpr std::uint32_t kRows = tag_key(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag_key(0x0028, 0x0011);
constexpr std::uint32_t kPixelSpacing = tag_key(0x0028, 0x0030);
constexpr std::uint32_t kBitsAllocated = tag_key(0x0028, 0x0100);
constexpr std::uint32_t kRescaleIntercept = tag_key(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag_key(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag_key(0x7FE0, 0x0010);

bool is_long_vr(const char vr[2]) {
    static constexpr const char* kLong[] = {"OB", "OW", "OF", "SQ", "UT", "UN"};
    for (const char* v : kLong) {
        if (vr[0] == v[0] && vr[1] == v[1]) return true;
    }
    return false;
}

struct Element {
    std::uint32_t key;
    char vr[3] = {0, 0, 0};
    std::vector<unsigned char> value;
};

class Reader {
  public:
    Reader(std::vector<unsigned char> bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    bool at_end() const { return pos_ >= bytes_.size(); }

    std::uint16_t peek_group() const {
        if (pos_ + 2 > bytes_.size()) throw ParseError("truncated element in file '" + path_ + "'");
        std::uint16_t g;
        std::memcpy(&g, bytes_.data() + pos_, 2);
        return g;
    }

    Element next() {
        Element e;
        const std::uint16_t group = u16();
        const std::uint16_t element = u16();
        e.key = tag_key(group, element);
        take(e.vr, 2);
        std::uint32_t len;
        if (is_long_vr(e.vr)) {
            u16();  // reserved
            len = u32();
        } else {
            len = u16();
        }
        if (len == 0xFFFFFFFFu) {
            throw FormatError("undefined-length element " + tag_str(group, element) + " in file '" +
                              path_ + "' is not supported");
        }
        if (pos_ + len > bytes_.size()) {
            throw ParseError("element " + tag_str(group, element) + " overruns file '" + path_ + "'");
        }
        e.value.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                       bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
        pos_ += len;
        return e;
    }

    void skip(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ParseError("truncated file '" + path_ + "'");
        pos_ += n;
    }

    const std::string& path() const { return path_; }

  private:
    std::uint16_t u16() {
        std::uint16_t v;
        take(&v, 2);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        take(&v, 4);
        return v;
    }
    void take(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ParseError("truncated element in file '" + path_ + "'");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::vector<unsigned char> bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string trimmed_string(const std::vector<unsigned char>& v) {
    std::string s(v.begin(), v.end());
    while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
    return s;
}

double parse_decimal(const std::string& text, const std::string& what, const std::string& path) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == 0) throw std::invalid_argument("empty");
        return v;
    } catch (const std::exception&) {
        throw ParseError("malformed " + what + " value '" + text + "' in file '" + path + "'");
    }
}

std::vector<std::string> split_multi(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t sep = text.find('\\', start);
        parts.push_back(text.substr(start, sep - start));
        if (sep == std::string::npos) break;
        start = sep + 1;
    }
    return parts;
}

}  // namespace

DicomSlice read_dicom_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("failed reading '" + path + "'");

    if (bytes.size() < 132 || std::memcmp(bytes.data() + 128, "DICM", 4) != 0) {
        throw FormatError("'" + path + "' is not a DICOM file");
    }

    Reader r(std::move(bytes), path);
    r.skip(132);

    // File meta group: only the transfer syntax matters here.
    std::string transfer_syntax;
    while (!r.at_end() && r.peek_group() == 0x0002) {
        Element e = r.next();
        if (e.key == tag_key(0x0002, 0x0010)) transfer_syntax = trimmed_string(e.value);
    }
    if (transfer_syntax != kExplicitLittleEndian) {
        throw FormatError("unsupported transfer syntax '" + transfer_syntax + "' in file '" + path +
                          "' (only explicit-VR little-endian is handled)");
    }

    std::optional<std::int64_t> rows, cols;
    std::optional<int> bits, instance;
    std::optional<double> slope, intercept, pos_z;
    std::optional<std::pair<double, double>> spacing;
    std::optional<std::vector<unsigned char>> pixel_data;
    DicomSlice out;
    out.source_file = path;

    while (!r.at_end()) {
        Element e = r.next();
        switch (e.key) {
            case kModality: out.modality = trimmed_string(e.value); break;
            case kPatientId: out.patient_id = trimmed_string(e.value); break;
            case kInstanceNumber:
                instance = static_cast<int>(parse_decimal(trimmed_string(e.value), "InstanceNumber", path));
                break;
            case kImagePosition: {
                const auto parts = split_multi(trimmed_string(e.value));
                if (parts.size() != 3) {
                    throw ParseError("tag " + tag_str(0x0020, 0x0032) + " in file '" + path +
                                     "' must hold three values");
                }
                pos_z = parse_decimal(parts[2], "ImagePositionPatient", path);
                break;
            }
            case kRows: {
                std::uint16_t v;
                if (e.value.size() != 2) throw ParseError("malformed Rows tag in file '" + path + "'");
                std::memcpy(&v, e.value.data(), 2);
                rows = v;
                break;
            }
            case kColumns: {
                std::uint16_t v;
                if (e.value.size() != 2) throw ParseError("malformed Columns tag in file '" + path + "'");
                std::memcpy(&v, e.value.data(), 2);
                cols = v;
                break;
            }
            case kPixelSpacing: {
                const auto parts = split_multi(trimmed_string(e.value));
                if (parts.size() != 2) {
                    throw ParseError("tag " + tag_str(0x0028, 0x0030) + " in file '" + path +
                                     "' must hold two values");
                }
                spacing = {parse_decimal(parts[0], "PixelSpacing", path),
                           parse_decimal(parts[1], "PixelSpacing", path)};
                break;
            }
            case kBitsAllocated: {
                std::uint16_t v;
                if (e.value.size() != 2) {
                    throw ParseError("malformed BitsAllocated tag in file '" + path + "'");
                }
                std::memcpy(&v, e.value.data(), 2);
                bits = v;
                break;
            }
            case kRescaleIntercept:
                intercept = parse_decimal(trimmed_string(e.value), "RescaleIntercept", path);
                break;
            case kRescaleSlope:
                slope = parse_decimal(trimmed_string(e.value), "RescaleSlope", path);
                break;
            case kPixelData: pixel_data = std::move(e.value); break;
            default: break;  // unneeded tag, already skipped past
        }
    }

    auto require = [&](bool present, std::uint16_t g, std::uint16_t el) {
        if (!present) {
            throw ParseError("missing tag " + tag_str(g, el) + " in file '" + path + "'");
        }
    };
    require(rows.has_value(), 0x0028, 0x0010);
    require(cols.has_value(), 0x0028, 0x0011);
    require(bits.has_value(), 0x0028, 0x0100);
    require(pos_z.has_value(), 0x0020, 0x0032);
    require(instance.has_value(), 0x0020, 0x0013);
    require(spacing.has_value(), 0x0028, 0x0030);
    require(pixel_data.has_value(), 0x7FE0, 0x0010);

    out.rows = *rows;
    out.cols = *cols;
    out.bits_allocated = *bits;
    out.instance_number = *instance;
    out.position_z = *pos_z;
    out.spacing_row = spacing->first;
    out.spacing_col = spacing->second;
    out.rescale_slope = slope.value_or(1.0);
    out.rescale_intercept = intercept.value_or(0.0);

    const std::int64_t count = out.rows * out.cols;
    out.pixels.resize(static_cast<std::size_t>(count));
    if (out.bits_allocated == 8) {
        if (static_cast<std::int64_t>(pixel_data->size()) < count) {
            throw ParseError("pixel data in file '" + path + "' is shorter than Rows*Columns");
        }
        for (std::int64_t i = 0; i < count; ++i) {
            out.pixels[static_cast<std::size_t>(i)] = static_cast<float>(
                static_cast<double>((*pixel_data)[static_cast<std::size_t>(i)]) * out.rescale_slope +
                out.rescale_intercept);
        }
    } else if (out.bits_allocated == 16) {
        if (static_cast<std::int64_t>(pixel_data->size()) < 2 * count) {
            throw ParseError("pixel data in file '" + path + "' is shorter than Rows*Columns");
        }
        for (std::int64_t i = 0; i < count; ++i) {
            std::uint16_t v;
            std::memcpy(&v, pixel_data->data() + 2 * i, 2);
            out.pixels[static_cast<std::size_t>(i)] =
                static_cast<float>(static_cast<double>(v) * out.rescale_slope + out.rescale_intercept);
        }
    } else {
        throw FormatError("unsupported BitsAllocated " + std::to_string(out.bits_allocated) +
                          " in file '" + path + "'");
    }
    return out;
}

DicomSeries read_dicom_series(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) paths.push_back(entry.path().string());
    }
    if (paths.empty()) throw IoError("directory '" + dir + "' holds no files");
    std::sort(paths.begin(), paths.end());

    std::vector<DicomSlice> slices;
    slices.reserve(paths.size());
    for (const auto& p : paths) slices.push_back(read_dicom_file(p));

    const auto& first = slices.front();
    for (const auto& s : slices) {
        if (s.rows != first.rows || s.cols != first.cols) {
            throw FormatError("slice geometry differs between '" + first.source_file + "' and '" +
                              s.source_file + "'");
        }
    }

    std::stable_sort(slices.begin(), slices.end(), [](const DicomSlice& a, const DicomSlice& b) {
        if (a.position_z != b.position_z) return a.position_z < b.position_z;
        return a.instance_number < b.instance_number;
    });

    DicomSeries series;
    series.depth = static_cast<std::int64_t>(slices.size());
    series.rows = first.rows;
    series.cols = first.cols;
    series.spacing_row = first.spacing_row;
    series.spacing_col = first.spacing_col;
    series.patient_id = first.patient_id;
    series.modality = first.modality;
    series.data.reserve(static_cast<std::size_t>(series.depth * series.rows * series.cols));
    for (const auto& s : slices) {
        series.data.insert(series.data.end(), s.pixels.begin(), s.pixels.end());
    }
    return series;
}

namespace {

class Writer {
  public:
    void raw(const void* src, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(src);
        bytes_.insert(bytes_.end(), p, p + n);
    }

    void element(std::uint16_t group, std::uint16_t elem, const char vr[2],
                 const std::vector<unsigned char>& value) {
        std::vector<unsigned char> padded = value;
        if (padded.size() % 2 != 0) {
            padded.push_back(vr[0] == 'U' && vr[1] == 'I' ? '\0' : ' ');
        }
        raw(&group, 2);
        raw(&elem, 2);
        raw(vr, 2);
        if (is_long_vr(vr)) {
            const std::uint16_t reserved = 0;
            raw(&reserved, 2);
            const auto len = static_cast<std::uint32_t>(padded.size());
            raw(&len, 4);
        } else {
            const auto len = static_cast<std::uint16_t>(padded.size());
            raw(&len, 2);
        }
        raw(padded.data(), padded.size());
    }

    void text(std::uint16_t group, std::uint16_t elem, const char vr[2], const std::string& s) {
        element(group, elem, vr, std::vector<unsigned char>(s.begin(), s.end()));
    }

    void us(std::uint16_t group, std::uint16_t elem, std::uint16_t v) {
        std::vector<unsigned char> b(2);
        std::memcpy(b.data(), &v, 2);
        element(group, elem, "US", b);
    }

    const std::vector<unsigned char>& bytes() const { return bytes_; }

  private:
    std::vector<unsigned char> bytes_;
};

std::string fmt_ds(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

void write_dicom_file(const std::string& path, const DicomWriteSpec& spec) {
    if (spec.rows < 1 || spec.cols < 1) throw ConfigError("dicom write: rows/cols must be positive");
    if (spec.bits_allocated != 8 && spec.bits_allocated != 16) {
        throw ConfigError("dicom write: bits allocated must be 8 or 16");
    }
    if (static_cast<std::int64_t>(spec.raw_pixels.size()) != spec.rows * spec.cols) {
        throw DimensionError("dicom write: pixel count disagrees with rows*cols");
    }

    auto omitted = [&](std::uint16_t g, std::uint16_t e) {
        return std::find(spec.omit_tags.begin(), spec.omit_tags.end(), tag_key(g, e)) !=
               spec.omit_tags.end();
    };

    Writer w;
    const std::vector<unsigned char> preamble(128, 0);
    w.raw(preamble.data(), preamble.size());
    w.raw("DICM", 4);
    w.text(0x0002, 0x0010, "UI", kExplicitLittleEndian);

    if (!spec.modality.empty() && !omitted(0x0008, 0x0060)) {
        w.text(0x0008, 0x0060, "CS", spec.modality);
    }
    if (!spec.patient_id.empty() && !omitted(0x0010, 0x0020)) {
        w.text(0x0010, 0x0020, "LO", spec.patient_id);
    }
    if (!omitted(0x0020, 0x0013)) {
        w.text(0x0020, 0x0013, "IS", std::to_string(spec.instance_number));
    }
    if (!omitted(0x0020, 0x0032)) {
        w.text(0x0020, 0x0032, "DS", "0\\0\\" + fmt_ds(spec.position_z));
    }
    if (!omitted(0x0028, 0x0010)) w.us(0x0028, 0x0010, static_cast<std::uint16_t>(spec.rows));
    if (!omitted(0x0028, 0x0011)) w.us(0x0028, 0x0011, static_cast<std::uint16_t>(spec.cols));
    if (!omitted(0x0028, 0x0030)) {
        w.text(0x0028, 0x0030, "DS", fmt_ds(spec.spacing_row) + "\\" + fmt_ds(spec.spacing_col));
    }
    if (!omitted(0x0028, 0x0100)) {
        w.us(0x0028, 0x0100, static_cast<std::uint16_t>(spec.bits_allocated));
    }
    if (!omitted(0x0028, 0x1052)) w.text(0x0028, 0x1052, "DS", fmt_ds(spec.rescale_intercept));
    if (!omitted(0x0028, 0x1053)) w.text(0x0028, 0x1053, "DS", fmt_ds(spec.rescale_slope));

    if (!omitted(0x7FE0, 0x0010)) {
        std::vector<unsigned char> pixels;
        if (spec.bits_allocated == 8) {
            pixels.reserve(spec.raw_pixels.size());
            for (std::uint16_t v : spec.raw_pixels) {
                pixels.push_back(static_cast<unsigned char>(v & 0xFF));
            }
        } else {
            pixels.resize(spec.raw_pixels.size() * 2);
            std::memcpy(pixels.data(), spec.raw_pixels.data(), pixels.size());
        }
        w.element(0x7FE0, 0x0010, "OW", pixels);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
    if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace hseg

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hseg {

// Minimal DICOM reader for explicit-VR little-endian single-frame grayscale
// files, plus a matching writer used to build fixtures and sample series.
// Any other encoding is rejected up front with FormatError.

struct DicomSlice {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    int bits_allocated = 16;
    double rescale_slope = 1.0;
    double rescale_intercept = 0.0;
    double position_z = 0.0;
    int instance_number = 0;
    double spacing_row = 1.0;
    double spacing_col = 1.0;
    std::string patient_id;  // optional tag; empty when absent
    std::string modality;    // optional tag; empty when absent
    std::string source_file;
    std::vector<float> pixels;  // rows*cols, rescale applied
};

/// Parses one file. Throws FormatError for non-DICOM input or an unsupported
/// transfer syntax, ParseError naming the tag and file when a required tag is
/// missing or malformed.
DicomSlice read_dicom_file(const std::string& path);

struct DicomSeries {
    std::int64_t depth = 0, rows = 0, cols = 0;
    std::vector<float> data;  // slice-major, sorted by position
    double spacing_row = 1.0, spacing_col = 1.0;
    std::string patient_id;
    std::string modality;
};

/// Reads every regular file in the directory and assembles a volume sorted
/// by image-position z (ties and missing-position sets fall back to the
/// instance number), so any on-disk ordering yields the same volume.
DicomSeries read_dicom_series(const std::string& dir);

struct DicomWriteSpec {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    int bits_allocated = 16;
    double rescale_slope = 1.0;
    double rescale_intercept = 0.0;
    double position_z = 0.0;
    int instance_number = 1;
    double spacing_row = 1.0;
    double spacing_col = 1.0;
    std::string patient_id = "anon";
    std::string modality = "MR";
    std::vector<std::uint16_t> raw_pixels;  // stored values, before rescale
    /// Tags to leave out, encoded as (group << 16) | element; lets tests
    /// produce deliberately incomplete files.
    std::vector<std::uint32_t> omit_tags;
};

void write_dicom_file(const std::string& path, const DicomWriteSpec& spec);

}  // namespace hseg

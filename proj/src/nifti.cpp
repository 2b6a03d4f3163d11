#include "bts/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace bts {

namespace {

// On-disk NIfTI-1 header, 348 bytes. Field layout follows nifti1.h.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1;
    float intent_p2;
    float intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max;
    float cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax;
    std::int32_t glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b;
    float quatern_c;
    float quatern_d;
    float qoffset_x;
    float qoffset_y;
    float qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_FLOAT32 = 16;

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_nifti: cannot open " + path.string());
    f.seekg(0, std::ios::end);
    std::streamoff len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
    f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw IoError("read_nifti: read failed for " + path.string());
    return bytes;
}

struct ParsedNifti {
    Nifti1Header hdr;
    Shape3 shape;
    Spacing3 spacing;
    GeometryInfo geom;
    const std::uint8_t* payload;
    std::size_t payload_bytes;
};

ParsedNifti parse_header(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < sizeof(Nifti1Header) + 4)
        throw ParseError("read_nifti: file too small for a NIfTI-1 header: " + name);
    ParsedNifti p{};
    std::memcpy(&p.hdr, bytes.data(), sizeof(Nifti1Header));
    const Nifti1Header& h = p.hdr;

    if (h.sizeof_hdr != 348) {
        // 348 byte-swapped is 1543569408: tell big-endian files apart from garbage.
        if (h.sizeof_hdr == 1543569408)
            throw ParseError("read_nifti: big-endian NIfTI is unsupported: " + name);
        throw ParseError("read_nifti: bad sizeof_hdr (" + std::to_string(h.sizeof_hdr) +
                         "), not a NIfTI-1 file: " + name);
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0)
        throw ParseError("read_nifti: bad magic (expected \"n+1\" single-file): " + name);

    if (!(h.dim[0] == 3 || (h.dim[0] == 4 && h.dim[4] == 1)))
        throw ParseError("read_nifti: unsupported dim[0]=" + std::to_string(h.dim[0]) +
                         " (need 3, or 4 with nt==1): " + name);
    p.shape = Shape3{h.dim[1], h.dim[2], h.dim[3]};
    if (p.shape.nx <= 0 || p.shape.ny <= 0 || p.shape.nz <= 0)
        throw ParseError("read_nifti: non-positive dimensions: " + name);

    for (int a = 0; a < 3; ++a) {
        float s = h.pixdim[a + 1];
        if (!(s > 0.0f))
            throw ParseError("read_nifti: non-positive pixdim[" + std::to_string(a + 1) +
                             "]: " + name);
        p.spacing[static_cast<std::size_t>(a)] = s;
    }

    if (h.datatype != DT_UINT8 && h.datatype != DT_INT16 && h.datatype != DT_FLOAT32)
        throw ParseError("read_nifti: unsupported datatype code " + std::to_string(h.datatype) +
                         " (only uint8/int16/float32): " + name);

    std::size_t elem = h.datatype == DT_UINT8 ? 1 : (h.datatype == DT_INT16 ? 2 : 4);
    std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    if (offset < 352 || offset > bytes.size())
        throw ParseError("read_nifti: bad vox_offset: " + name);
    std::size_t need = static_cast<std::size_t>(p.shape.voxels()) * elem;
    if (bytes.size() - offset < need)
        throw ParseError("read_nifti: truncated payload (need " + std::to_string(need) +
                         " bytes): " + name);
    p.payload = bytes.data() + offset;
    p.payload_bytes = need;

    p.geom.qform_code = h.qform_code;
    p.geom.sform_code = h.sform_code;
    p.geom.quatern[0] = h.quatern_b;
    p.geom.quatern[1] = h.quatern_c;
    p.geom.quatern[2] = h.quatern_d;
    p.geom.qoffset[0] = h.qoffset_x;
    p.geom.qoffset[1] = h.qoffset_y;
    p.geom.qoffset[2] = h.qoffset_z;
    std::memcpy(p.geom.srow + 0, h.srow_x, 16);
    std::memcpy(p.geom.srow + 4, h.srow_y, 16);
    std::memcpy(p.geom.srow + 8, h.srow_z, 16);
    p.geom.qfac = h.pixdim[0] == 0.0f ? 1.0f : h.pixdim[0];
    p.geom.xyzt_units = h.xyzt_units;
    return p;
}

std::vector<std::uint8_t> load_maybe_gzipped(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = read_file_bytes(path);
    if (looks_gzipped(bytes)) return gzip_decompress(bytes);
    return bytes;
}

Nifti1Header make_header(const Shape3& shape, const Spacing3& spacing,
                         const std::optional<GeometryInfo>& geom, std::int16_t datatype,
                         std::int16_t bitpix) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(shape.nx);
    h.dim[2] = static_cast<std::int16_t>(shape.ny);
    h.dim[3] = static_cast<std::int16_t>(shape.nz);
    h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = geom ? geom->qfac : 1.0f;
    h.pixdim[1] = spacing[0];
    h.pixdim[2] = spacing[1];
    h.pixdim[3] = spacing[2];
    h.pixdim[4] = h.pixdim[5] = h.pixdim[6] = h.pixdim[7] = 0.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = geom ? geom->xyzt_units : 2; // mm
    if (geom) {
        h.qform_code = geom->qform_code;
        h.sform_code = geom->sform_code;
        h.quatern_b = geom->quatern[0];
        h.quatern_c = geom->quatern[1];
        h.quatern_d = geom->quatern[2];
        h.qoffset_x = geom->qoffset[0];
        h.qoffset_y = geom->qoffset[1];
        h.qoffset_z = geom->qoffset[2];
        std::memcpy(h.srow_x, geom->srow + 0, 16);
        std::memcpy(h.srow_y, geom->srow + 4, 16);
        std::memcpy(h.srow_z, geom->srow + 8, 16);
    }
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
                 bool compress) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_nifti: cannot open " + path.string());
    if (compress) {
        std::vector<std::uint8_t> gz = gzip_compress(bytes);
        f.write(reinterpret_cast<const char*>(gz.data()), static_cast<std::streamsize>(gz.size()));
    } else {
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    }
    if (!f) throw IoError("write_nifti: write failed for " + path.string());
}

bool wants_gzip(const std::filesystem::path& path, bool compress) {
    return compress || path.extension() == ".gz";
}

std::vector<std::uint8_t> assemble(const Nifti1Header& h, const void* payload, std::size_t n) {
    std::vector<std::uint8_t> bytes(352 + n, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    // bytes 348..351: extension flag, all zero = no extensions
    std::memcpy(bytes.data() + 352, payload, n);
    return bytes;
}

} // namespace

bool looks_gzipped(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& raw) {
    z_stream zs{};
    // windowBits 15+16 selects the gzip (RFC 1952) wrapper
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK)
        throw IoError("gzip_compress: deflateInit2 failed");
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())) + 32);
    zs.next_in = const_cast<Bytef*>(raw.data());
    zs.avail_in = static_cast<uInt>(raw.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = deflate(&zs, Z_FINISH);
    if (rc != Z_STREAM_END) {
        deflateEnd(&zs);
        throw IoError("gzip_compress: deflate failed (" + std::to_string(rc) + ")");
    }
    out.resize(zs.total_out);
    deflateEnd(&zs);
    return out;
}

std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& gz) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK)
        throw IoError("gzip_decompress: inflateInit2 failed");
    std::vector<std::uint8_t> out;
    out.reserve(gz.size() * 4);
    std::uint8_t buf[1 << 16];
    zs.next_in = const_cast<Bytef*>(gz.data());
    zs.avail_in = static_cast<uInt>(gz.size());
    int rc = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw ParseError("gzip_decompress: corrupt gzip stream (" + std::to_string(rc) + ")");
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (rc != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

Volume3 read_nifti_volume(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = load_maybe_gzipped(path);
    ParsedNifti p = parse_header(bytes, path.string());

    Volume3 v;
    v.shape = p.shape;
    v.spacing = p.spacing;
    v.geom = p.geom;
    const std::size_t n = static_cast<std::size_t>(p.shape.voxels());
    v.data.resize(n);
    if (p.hdr.datatype == DT_FLOAT32) {
        std::memcpy(v.data.data(), p.payload, n * 4);
    } else if (p.hdr.datatype == DT_INT16) {
        const std::int16_t* src = reinterpret_cast<const std::int16_t*>(p.payload);
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(src[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(p.payload[i]);
    }
    // Our writer always emits slope 1 / inter 0; honor scaled inputs anyway.
    if ((p.hdr.scl_slope != 0.0f && p.hdr.scl_slope != 1.0f) || p.hdr.scl_inter != 0.0f) {
        float slope = p.hdr.scl_slope == 0.0f ? 1.0f : p.hdr.scl_slope;
        for (float& x : v.data) x = x * slope + p.hdr.scl_inter;
    }
    v.validate();
    return v;
}

LabelMap read_nifti_labels(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = load_maybe_gzipped(path);
    ParsedNifti p = parse_header(bytes, path.string());
    if (p.hdr.datatype != DT_UINT8)
        throw ParseError("read_nifti: label maps must be uint8, got datatype code " +
                         std::to_string(p.hdr.datatype) + ": " + path.string());
    if ((p.hdr.scl_slope != 0.0f && p.hdr.scl_slope != 1.0f) || p.hdr.scl_inter != 0.0f)
        throw ParseError("read_nifti: scaled label maps are unsupported: " + path.string());

    LabelMap m;
    m.shape = p.shape;
    m.spacing = p.spacing;
    m.geom = p.geom;
    m.data.assign(p.payload, p.payload + p.shape.voxels());
    m.validate();
    return m;
}

void write_nifti(const Volume3& vol, const std::filesystem::path& path, bool compress) {
    vol.validate();
    Nifti1Header h = make_header(vol.shape, vol.spacing, vol.geom, DT_FLOAT32, 32);
    write_bytes(path, assemble(h, vol.data.data(), vol.data.size() * 4),
                wants_gzip(path, compress));
}

void write_nifti(const LabelMap& labels, const std::filesystem::path& path, bool compress) {
    labels.validate();
    Nifti1Header h = make_header(labels.shape, labels.spacing, labels.geom, DT_UINT8, 8);
    write_bytes(path, assemble(h, labels.data.data(), labels.data.size()),
                wants_gzip(path, compress));
}

} // namespace bts

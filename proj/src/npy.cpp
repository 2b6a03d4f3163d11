#include "bts/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace bts {

namespace {

constexpr char NPY_MAGIC[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

std::string dtype_descr(NpyDtype d) {
    return d == NpyDtype::Float32 ? "<f4" : "|u1";
}

std::size_t dtype_size(NpyDtype d) {
    return d == NpyDtype::Float32 ? 4 : 1;
}

std::string format_shape(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << shape[i];
        if (shape.size() == 1)
            os << ",";
        else if (i + 1 < shape.size())
            os << ", ";
    }
    os << ")";
    return os.str();
}

void write_raw(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
               NpyDtype dtype, const void* payload, std::size_t payload_bytes) {
    if (shape.empty()) throw ValueError("write_npy: rank must be >= 1");
    std::int64_t count = 1;
    for (auto d : shape) {
        if (d < 0) throw ValueError("write_npy: negative dimension");
        count *= d;
    }
    if (static_cast<std::size_t>(count) * dtype_size(dtype) != payload_bytes)
        throw ShapeError("write_npy: payload size does not match shape");

    std::string dict = "{'descr': '" + dtype_descr(dtype) +
                       "', 'fortran_order': False, 'shape': " + format_shape(shape) + ", }";
    // magic(6) + version(2) + header-len(2) + dict + padding + '\n', 64-byte aligned
    std::size_t unpadded = 10 + dict.size() + 1;
    std::size_t total = (unpadded + 63) / 64 * 64;
    std::string header = dict + std::string(total - unpadded, ' ') + "\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_npy: cannot open " + path.string());
    f.write(NPY_MAGIC, 6);
    f.put('\x01');
    f.put('\x00');
    std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
    char lenbuf[2] = {static_cast<char>(hlen & 0xff), static_cast<char>(hlen >> 8)};
    f.write(lenbuf, 2);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
    if (!f) throw IoError("write_npy: write failed for " + path.string());
}

// Pulls the value of a quoted or bare python literal following "'key':".
std::string find_dict_value(const std::string& dict, const std::string& key) {
    std::string needle = "'" + key + "':";
    std::size_t pos = dict.find(needle);
    if (pos == std::string::npos)
        throw ParseError("read_npy: header dict missing key '" + key + "'");
    pos += needle.size();
    while (pos < dict.size() && dict[pos] == ' ') ++pos;
    if (pos >= dict.size()) throw ParseError("read_npy: malformed header dict");
    if (dict[pos] == '\'') {
        std::size_t end = dict.find('\'', pos + 1);
        if (end == std::string::npos) throw ParseError("read_npy: unterminated string in header");
        return dict.substr(pos + 1, end - pos - 1);
    }
    if (dict[pos] == '(') {
        std::size_t end = dict.find(')', pos);
        if (end == std::string::npos) throw ParseError("read_npy: unterminated tuple in header");
        return dict.substr(pos, end - pos + 1);
    }
    std::size_t end = dict.find_first_of(",}", pos);
    if (end == std::string::npos) throw ParseError("read_npy: malformed header dict");
    std::string v = dict.substr(pos, end - pos);
    while (!v.empty() && v.back() == ' ') v.pop_back();
    return v;
}

std::vector<std::int64_t> parse_shape(const std::string& tuple) {
    if (tuple.size() < 2 || tuple.front() != '(' || tuple.back() != ')')
        throw ParseError("read_npy: malformed shape tuple");
    std::vector<std::int64_t> shape;
    std::string inner = tuple.substr(1, tuple.size() - 2);
    std::stringstream ss(inner);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::string t;
        for (char c : tok)
            if (c != ' ') t += c;
        if (t.empty()) continue;
        shape.push_back(std::stoll(t));
    }
    return shape;
}

} // namespace

std::int64_t NpyArray::elements() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

NpyArray read_npy(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_npy: cannot open " + path.string());

    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, NPY_MAGIC, 6) != 0)
        throw ParseError("read_npy: bad magic in " + path.string());
    unsigned char ver[2];
    f.read(reinterpret_cast<char*>(ver), 2);
    if (!f || ver[0] != 1 || ver[1] != 0)
        throw ParseError("read_npy: unsupported NPY version " + std::to_string(int(ver[0])) +
                         "." + std::to_string(int(ver[1])));
    unsigned char lenbuf[2];
    f.read(reinterpret_cast<char*>(lenbuf), 2);
    if (!f) throw ParseError("read_npy: truncated header");
    std::size_t hlen = lenbuf[0] | (std::size_t(lenbuf[1]) << 8);
    std::string header(hlen, '\0');
    f.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw ParseError("read_npy: truncated header");

    std::string descr = find_dict_value(header, "descr");
    std::string fortran = find_dict_value(header, "fortran_order");
    std::vector<std::int64_t> shape = parse_shape(find_dict_value(header, "shape"));

    if (fortran != "False")
        throw ParseError("read_npy: fortran_order=True is unsupported");
    if (shape.empty())
        throw ParseError("read_npy: zero-rank arrays are unsupported");
    NpyDtype dtype;
    if (descr == "<f4")
        dtype = NpyDtype::Float32;
    else if (descr == "|u1")
        dtype = NpyDtype::Uint8;
    else
        throw ParseError("read_npy: unsupported descr '" + descr + "'");

    std::int64_t count = 1;
    for (auto d : shape) {
        if (d < 0) throw ParseError("read_npy: negative dimension in shape");
        count *= d;
    }

    NpyArray out;
    out.shape = shape;
    out.dtype = dtype;
    if (dtype == NpyDtype::Float32) {
        std::vector<float> values(static_cast<std::size_t>(count));
        f.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * 4));
        if (f.gcount() != static_cast<std::streamsize>(values.size() * 4))
            throw ParseError("read_npy: truncated payload in " + path.string());
        out.data = std::move(values);
    } else {
        std::vector<std::uint8_t> values(static_cast<std::size_t>(count));
        f.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size()));
        if (f.gcount() != static_cast<std::streamsize>(values.size()))
            throw ParseError("read_npy: truncated payload in " + path.string());
        out.data = std::move(values);
    }
    return out;
}

void write_npy(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
               const std::vector<float>& values) {
    write_raw(path, shape, NpyDtype::Float32, values.data(), values.size() * 4);
}

void write_npy(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
               const std::vector<std::uint8_t>& values) {
    write_raw(path, shape, NpyDtype::Uint8, values.data(), values.size());
}

void write_npy(const std::filesystem::path& path, const NpyArray& array) {
    if (array.dtype == NpyDtype::Float32)
        write_npy(path, array.shape, array.f32());
    else
        write_npy(path, array.shape, array.u8());
}

} // namespace bts

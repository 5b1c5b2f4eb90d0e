#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metrpo {

// Doubles are serialized with 17 significant digits so that parsing them
// back reproduces the exact bit pattern (round-trip safe).
inline std::string g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path)
    {
        if (!out_)
            throw std::runtime_error("cannot open for writing: " + path);
    }

    // Raw comment line (used for config headers).
    void comment(const std::string& line) { out_ << "# " << line << "\n"; }

    void row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i)
                out_ << ",";
            out_ << cells[i];
        }
        out_ << "\n";
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

} // namespace metrpo

# display package（matplotlib による SVG 出力）

/// Blue → green → red lookup table indexed by `round(heat · 255)`.
pub const COLORMAP: [[u8; 3]; 256] = [
    [0, 0, 255], [0, 2, 253], [0, 4, 251], [0, 6, 249],
    [0, 8, 247], [0, 10, 245], [0, 12, 243], [0, 14, 241],
    [0, 16, 239], [0, 18, 237], [0, 20, 235], [0, 22, 233],
    [0, 24, 231], [0, 26, 229], [0, 28, 227], [0, 30, 225],
    [0, 32, 223], [0, 34, 221], [0, 36, 219], [0, 38, 217],
    [0, 40, 215], [0, 42, 213], [0, 44, 211], [0, 46, 209],
    [0, 48, 207], [0, 50, 205], [0, 52, 203], [0, 54, 201],
    [0, 56, 199], [0, 58, 197], [0, 60, 195], [0, 62, 193],
    [0, 64, 191], [0, 66, 189], [0, 68, 187], [0, 70, 185],
    [0, 72, 183], [0, 74, 181], [0, 76, 179], [0, 78, 177],
    [0, 80, 175], [0, 82, 173], [0, 84, 171], [0, 86, 169],
    [0, 88, 167], [0, 90, 165], [0, 92, 163], [0, 94, 161],
    [0, 96, 159], [0, 98, 157], [0, 100, 155], [0, 102, 153],
    [0, 104, 151], [0, 106, 149], [0, 108, 147], [0, 110, 145],
    [0, 112, 143], [0, 114, 141], [0, 116, 139], [0, 118, 137],
    [0, 120, 135], [0, 122, 133], [0, 124, 131], [0, 126, 129],
    [0, 129, 126], [0, 131, 124], [0, 133, 122], [0, 135, 120],
    [0, 137, 118], [0, 139, 116], [0, 141, 114], [0, 143, 112],
    [0, 145, 110], [0, 147, 108], [0, 149, 106], [0, 151, 104],
    [0, 153, 102], [0, 155, 100], [0, 157, 98], [0, 159, 96],
    [0, 161, 94], [0, 163, 92], [0, 165, 90], [0, 167, 88],
    [0, 169, 86], [0, 171, 84], [0, 173, 82], [0, 175, 80],
    [0, 177, 78], [0, 179, 76], [0, 181, 74], [0, 183, 72],
    [0, 185, 70], [0, 187, 68], [0, 189, 66], [0, 191, 64],
    [0, 193, 62], [0, 195, 60], [0, 197, 58], [0, 199, 56],
    [0, 201, 54], [0, 203, 52], [0, 205, 50], [0, 207, 48],
    [0, 209, 46], [0, 211, 44], [0, 213, 42], [0, 215, 40],
    [0, 217, 38], [0, 219, 36], [0, 221, 34], [0, 223, 32],
    [0, 225, 30], [0, 227, 28], [0, 229, 26], [0, 231, 24],
    [0, 233, 22], [0, 235, 20], [0, 237, 18], [0, 239, 16],
    [0, 241, 14], [0, 243, 12], [0, 245, 10], [0, 247, 8],
    [0, 249, 6], [0, 251, 4], [0, 253, 2], [0, 255, 0],
    [0, 255, 0], [2, 253, 0], [4, 251, 0], [6, 249, 0],
    [8, 247, 0], [10, 245, 0], [12, 243, 0], [14, 241, 0],
    [16, 239, 0], [18, 237, 0], [20, 235, 0], [22, 233, 0],
    [24, 231, 0], [26, 229, 0], [28, 227, 0], [30, 225, 0],
    [32, 223, 0], [34, 221, 0], [36, 219, 0], [38, 217, 0],
    [40, 215, 0], [42, 213, 0], [44, 211, 0], [46, 209, 0],
    [48, 207, 0], [50, 205, 0], [52, 203, 0], [54, 201, 0],
    [56, 199, 0], [58, 197, 0], [60, 195, 0], [62, 193, 0],
    [64, 191, 0], [66, 189, 0], [68, 187, 0], [70, 185, 0],
    [72, 183, 0], [74, 181, 0], [76, 179, 0], [78, 177, 0],
    [80, 175, 0], [82, 173, 0], [84, 171, 0], [86, 169, 0],
    [88, 167, 0], [90, 165, 0], [92, 163, 0], [94, 161, 0],
    [96, 159, 0], [98, 157, 0], [100, 155, 0], [102, 153, 0],
    [104, 151, 0], [106, 149, 0], [108, 147, 0], [110, 145, 0],
    [112, 143, 0], [114, 141, 0], [116, 139, 0], [118, 137, 0],
    [120, 135, 0], [122, 133, 0], [124, 131, 0], [126, 129, 0],
    [129, 126, 0], [131, 124, 0], [133, 122, 0], [135, 120, 0],
    [137, 118, 0], [139, 116, 0], [141, 114, 0], [143, 112, 0],
    [145, 110, 0], [147, 108, 0], [149, 106, 0], [151, 104, 0],
    [153, 102, 0], [155, 100, 0], [157, 98, 0], [159, 96, 0],
    [161, 94, 0], [163, 92, 0], [165, 90, 0], [167, 88, 0],
    [169, 86, 0], [171, 84, 0], [173, 82, 0], [175, 80, 0],
    [177, 78, 0], [179, 76, 0], [181, 74, 0], [183, 72, 0],
    [185, 70, 0], [187, 68, 0], [189, 66, 0], [191, 64, 0],
    [193, 62, 0], [195, 60, 0], [197, 58, 0], [199, 56, 0],
    [201, 54, 0], [203, 52, 0], [205, 50, 0], [207, 48, 0],
    [209, 46, 0], [211, 44, 0], [213, 42, 0], [215, 40, 0],
    [217, 38, 0], [219, 36, 0], [221, 34, 0], [223, 32, 0],
    [225, 30, 0], [227, 28, 0], [229, 26, 0], [231, 24, 0],
    [233, 22, 0], [235, 20, 0], [237, 18, 0], [239, 16, 0],
    [241, 14, 0], [243, 12, 0], [245, 10, 0], [247, 8, 0],
    [249, 6, 0], [251, 4, 0], [253, 2, 0], [255, 0, 0],
];

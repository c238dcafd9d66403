from django import template

register = template.Library()

# colour-blind friendly categorical palette
PALETTE = ['#0072b2', '#e69f00', '#009e73', '#cc79a7', '#56b4e9', '#d55e00', '#f0e442', '#000000']
UNGROUPED = '#7f7f7f'


@register.filter
def score(value):
    return '%.3f' % value


@register.filter
def percent(ratio):
    return '%d%%' % round(ratio * 100)


@register.filter
def coord(value):
    return '%.2f' % value


# Cycle the palette for any number of groups; -1 means no group
@register.filter
def palette(index):
    if index < 0:
        return UNGROUPED
    return PALETTE[index % len(PALETTE)]


@register.filter
def column(name, width):
    return str(name).ljust(int(width))
